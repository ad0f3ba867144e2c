"""Deep supervised hashing toolkit.

Trains a small convolutional network to emit compact binary codes for
images, with a set of alternating and pairwise training objectives, and
evaluates retrieval through a bit-packed Hamming search engine.
"""

__version__ = "0.1.0"
