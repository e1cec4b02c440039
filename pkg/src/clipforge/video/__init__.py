"""Frame/clip/sample data model, file formats and the synthetic corpus."""

from .data import UNLABELED, Frame, VideoSample, build_samples
from .io import (
    TruncatedFileError,
    VideoFormatError,
    load_corpus,
    load_frames,
    read_manifest,
    save_corpus,
    store_frames,
    write_manifest,
)
from .resize import resize, resize_array, resize_backward, resize_matrix
from .synthetic import SyntheticCorpusSpec, generate_corpus

__all__ = [
    "UNLABELED",
    "Frame",
    "SyntheticCorpusSpec",
    "TruncatedFileError",
    "VideoFormatError",
    "VideoSample",
    "build_samples",
    "generate_corpus",
    "load_corpus",
    "load_frames",
    "read_manifest",
    "resize",
    "resize_array",
    "resize_backward",
    "resize_matrix",
    "save_corpus",
    "store_frames",
    "write_manifest",
]
