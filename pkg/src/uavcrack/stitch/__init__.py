"""Invariant-feature stitching of overlapping survey images."""
from .homography import (
    MatchSet,
    apply_h,
    dlt_homography,
    estimate_homography_ransac,
    symmetric_transfer_error,
    verify_match,
)
from .matching import match_descriptors
from .mosaic import Mosaic, StitchParams, compose_mosaic, match_all, match_pair, stitch_images
from .sift import Keypoint, SiftParams, detect_keypoints

__all__ = [
    "Keypoint",
    "MatchSet",
    "Mosaic",
    "SiftParams",
    "StitchParams",
    "apply_h",
    "compose_mosaic",
    "detect_keypoints",
    "dlt_homography",
    "estimate_homography_ransac",
    "match_all",
    "match_descriptors",
    "match_pair",
    "stitch_images",
    "symmetric_transfer_error",
    "verify_match",
]
