"""scikit-learn style wrappers so the detector and the target encoder compose
with ``clone``, ``get_params`` / ``set_params`` and pipelines."""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backend import BackendSpec, load_backend
from .codec import DEFAULT_MIN_OVERLAP, MIN_FACE, STRIDE, encode_targets
from .decoder import DecodeConfig
from .evaluation import evaluate
from .pipeline import detect_image
from .postprocess import VOTE_IOU, PostConfig
from .validation import check_dims, check_faces, check_fraction, check_images


class CenterFaceDetector(BaseEstimator):
    """Face detector over a pluggable backend.

    Parameters
    ----------
    model_path : str, optional
        ONNX model file; falls back to ``$CENTERFACE_MODEL``. Ignored when
        ``backend`` is given.
    backend : object, optional
        Ready backend handle (anything with ``run(prep)``), e.g. a
        ``SyntheticBackend``.
    score_threshold, top_k : decoding controls.
    nms_iou, vote_iou : post-processing IoU thresholds.
    scales : sequence of float
        Test-time scale factors; each is run once, twice with ``flip``.
    flip : bool
        Also run mirrored views.
    long_side : int, optional
        Downscale inputs so their long side does not exceed this.

    There is nothing to learn: ``fit`` only validates parameters and loads the
    backend.
    """

    def __init__(
        self,
        model_path=None,
        backend=None,
        score_threshold=0.05,
        top_k=200,
        nms_iou=0.3,
        vote_iou=VOTE_IOU,
        scales=(1.0,),
        flip=False,
        long_side=None,
        spec=None,
    ):
        self.model_path = model_path
        self.backend = backend
        self.score_threshold = score_threshold
        self.top_k = top_k
        self.nms_iou = nms_iou
        self.vote_iou = vote_iou
        self.scales = scales
        self.flip = flip
        self.long_side = long_side
        self.spec = spec

    def fit(self, X=None, y=None):
        check_fraction(self.score_threshold, "score_threshold")
        check_fraction(self.nms_iou, "nms_iou", low_open=True)
        check_fraction(self.vote_iou, "vote_iou", low_open=True)
        self.decode_config_ = DecodeConfig(score_threshold=self.score_threshold, top_k=int(self.top_k))
        self.post_config_ = PostConfig(
            nms_iou=self.nms_iou, vote_iou=self.vote_iou, tta_scales=tuple(self.scales), tta_flip=bool(self.flip)
        )
        self.spec_ = self.spec or BackendSpec()
        self.backend_ = self.backend if self.backend is not None else load_backend(self.model_path, self.spec_)
        return self

    def predict(self, X):
        """Detections for each ``(3, H, W)`` image, in source-image pixels."""
        check_is_fitted(self, "backend_")
        return [
            detect_image(
                im, self.backend_, self.decode_config_, self.post_config_, long_side=self.long_side, spec=self.spec_
            )
            for im in check_images(X)
        ]

    def score(self, X, y, iou_thresh=0.5):
        """Average precision of ``predict(X)`` against ground-truth boxes ``y``."""
        preds = self.predict(X)
        keys = [str(i) for i in range(len(preds))]
        gts = {k: [f.box for f in check_faces(faces)] for k, faces in zip(keys, y)}
        return evaluate(dict(zip(keys, preds)), gts, iou_thresh=iou_thresh).ap


class TargetEncoder(TransformerMixin, BaseEstimator):
    """Turns per-image face lists into stride-4 ``TargetMaps``."""

    def __init__(self, input_size=(800, 800), min_face=MIN_FACE, min_overlap=DEFAULT_MIN_OVERLAP):
        self.input_size = input_size
        self.min_face = min_face
        self.min_overlap = min_overlap

    def fit(self, X=None, y=None):
        self.input_size_ = check_dims(self.input_size, multiple=STRIDE)
        check_fraction(self.min_overlap, "min_overlap", low_open=True)
        if self.min_face < 0:
            raise ValueError("min_face must be non-negative")
        return self

    def transform(self, X):
        check_is_fitted(self, "input_size_")
        return [
            encode_targets(
                check_faces(faces), self.input_size_, min_face=self.min_face, min_overlap=self.min_overlap
            )
            for faces in X
        ]
