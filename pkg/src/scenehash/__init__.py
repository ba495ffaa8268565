"""scenehash: object-centric perceptual hashing for image attribution.

A scene (raster plus externally supplied object detections) is encoded into
a 64-bit code that survives benign redistribution transforms but flips under
object-level manipulation. The package also ships the training loop, a
popcount Hamming index, retrieval benchmarks, and epipolar verification used
to attribute query images back to trusted originals.
"""

__version__ = "0.1.0"
