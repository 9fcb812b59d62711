"""Finger-gesture recognition from bone-conducted wrist audio.

A two-stage pipeline: a cheap always-on amplitude gate over a band-passed
sample stream triggers MFCC extraction and a small CNN classifier; detections
are consolidated by non-maximum suppression and streamed to consumers.
"""

GESTURES = ("pinch", "rub_up", "rub_down", "flick", "open_palm")

CANONICAL_RATE_HZ = 16000

__version__ = "0.1.0"
