"""Toy detector and recognizer, rectangle crops, and their composition.

The detector is a stride-4 conv stack followed by one Transformer encoder
layer (its features ``F_det`` are what the bridge crops) and a dense head
predicting objectness and a box per cell. The recognizer maps a 32x96 crop to
24 feature tokens (``F_i``) and classifies each token over 20 glyphs + blank.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ConfigurationError, DimensionError, Tensor
from .bridge import BridgeState, positional_encoding
from .datasynth import ALPHABET, CROP_H, CROP_W
from .nn import (Conv2d, LayerNorm, Linear, ParameterStore, TransformerEncoderLayer,
                 insert_adapters)

log = logging.getLogger(__name__)

FEAT_CROP_H, FEAT_CROP_W = 8, 24
SEQ_LEN = 24
BLANK = 0


class TrainingAbort(RuntimeError):
    """Raised when a loss turns non-finite."""


@dataclass(frozen=True)
class DetectorConfig:
    height: int = 48
    width: int = 96
    channels: int = 32
    heads: int = 2
    stride: int = 4
    score_threshold: float = 0.5
    nms_iou: float = 0.5
    max_detections: int = 16


@dataclass(frozen=True)
class RecognizerConfig:
    dim: int = 32
    heads: int = 2
    widths: tuple[int, int, int] = (16, 32, 64)


# --- detector --------------------------------------------------------------------

@dataclass
class DetectionPrediction:
    boxes: np.ndarray  # (n, 4) x0, y0, x1, y1
    scores: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.scores)


class ToyDetector:
    def __init__(self, cfg: DetectorConfig = DetectorConfig(),
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        c = cfg.channels
        s = self.store = ParameterStore()
        self.conv1 = Conv2d(s, "det.backbone.conv1", 1, 16, 3, 1, 1, rng=rng)
        self.conv2 = Conv2d(s, "det.backbone.conv2", 16, 32, 3, 2, 1, rng=rng)
        self.conv3 = Conv2d(s, "det.backbone.conv3", 32, c, 3, 2, 1, rng=rng)
        self.encoder = TransformerEncoderLayer(s, "det.backbone.encoder", c, cfg.heads, rng=rng)
        self.head = Conv2d(s, "det.head.out", c, 5, 3, 1, 1, rng=rng)
        fh, fw = cfg.height // cfg.stride, cfg.width // cfg.stride
        self.pe = positional_encoding(fh * fw, c)

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return self.cfg.channels, self.cfg.height // self.cfg.stride, self.cfg.width // self.cfg.stride

    def backbone(self, images: Tensor) -> Tensor:
        """(N, 1, H, W) -> F_det (N, c_det, H/4, W/4)."""
        return self.encode(self.stem(images))

    def stem(self, images: Tensor) -> Tensor:
        """Convolutional half of the backbone: images -> position-tagged tokens (N, hw, c)."""
        n, _, h, w = images.shape
        s = self.cfg.stride
        if h % s or w % s:
            raise ConfigurationError(f"image {h}x{w} not divisible by detector stride {s}")
        if (h, w) != (self.cfg.height, self.cfg.width):
            raise DimensionError(f"detector built for {self.cfg.height}x{self.cfg.width}, "
                                 f"got {h}x{w}")
        x = ad.relu(self.conv1(images))
        x = ad.relu(self.conv2(x))
        x = self.conv3(x)
        c, fh, fw = x.shape[1:]
        return ad.add(x.reshape(n, c, fh * fw).transpose(0, 2, 1), Tensor(self.pe))

    def encode(self, tokens: Tensor) -> Tensor:
        n, _, c = tokens.shape
        fh, fw = self.feature_shape[1:]
        return self.encoder(tokens).transpose(0, 2, 1).reshape(n, c, fh, fw)

    def forward_from_stem(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        f_det = self.encode(tokens)
        return f_det, self.head_forward(f_det)

    def stem_frozen(self) -> bool:
        return all(self.store.is_frozen(n) for n in self.store.names()
                   if n.startswith("det.backbone.conv"))

    def head_forward(self, f_det: Tensor) -> Tensor:
        """Raw head output (N, 5, h, w): objectness logit, dx, dy, log w, log h."""
        return self.head(ad.relu(f_det))

    def forward(self, images: Tensor) -> tuple[Tensor, Tensor]:
        f_det = self.backbone(images)
        return f_det, self.head_forward(f_det)

    def insert_adapters(self, rng=None):
        return insert_adapters(self.encoder, self.store, rng=rng)

    def adapter_norm_pattern(self) -> str:
        return "det.backbone.encoder.norm*"


def decode_boxes(raw: np.ndarray, cfg: DetectorConfig) -> list[DetectionPrediction]:
    """Threshold, keep 3x3 score peaks, decode and NMS per image from raw output (N, 5, h, w)."""
    s = cfg.stride
    n, _, fh, fw = raw.shape
    cy, cx = np.meshgrid((np.arange(fh) + 0.5) * s, (np.arange(fw) + 0.5) * s, indexing="ij")
    out = []
    for b in range(n):
        score = ad._sigmoid(raw[b, 0])
        keep = (score > cfg.score_threshold) & _peaks(score)
        if not keep.any():
            out.append(DetectionPrediction(np.zeros((0, 4)), np.zeros(0)))
            continue
        px = cx[keep] + raw[b, 1][keep] * s
        py = cy[keep] + raw[b, 2][keep] * s
        pw = np.exp(np.clip(raw[b, 3][keep], -5, 6)) * s
        ph = np.exp(np.clip(raw[b, 4][keep], -5, 6)) * s
        boxes = np.stack([px - pw / 2, py - ph / 2, px + pw / 2, py + ph / 2], axis=1)
        boxes = clamp_boxes(boxes, cfg.height, cfg.width)
        sc = score[keep]
        ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
        boxes, sc = boxes[ok], sc[ok]
        idx = nms(boxes, sc, cfg.nms_iou)[:cfg.max_detections]
        out.append(DetectionPrediction(boxes[idx], sc[idx]))
    return out


def clamp_boxes(boxes: np.ndarray, height: int, width: int) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    b[:, [0, 2]] = b[:, [0, 2]].clip(0, width)
    b[:, [1, 3]] = b[:, [1, 3]].clip(0, height)
    return b


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix0 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy0 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix1 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy1 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix1 - ix0, 0, None) * np.clip(iy1 - iy0, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        if order.size == 1:
            break
        ious = box_iou(boxes[i:i + 1], boxes[order[1:]])[0]
        order = order[1:][ious < iou_threshold]
    return np.array(keep, dtype=np.intp)


def detection_targets(gt_boxes: list[np.ndarray], cfg: DetectorConfig):
    """Dense training targets for a batch.

    Returns (objectness (N,h,w), objectness weight (N,h,w), box targets
    (N,4,h,w), regression mask (N,h,w)). Objectness is positive on the 3x3
    block of cells around the box centre (clipped to the box) and negative
    everywhere else, so off-centre cells learn not to fire on word fragments.
    Box regression is trained on the central band plus that block.
    """
    s = cfg.stride
    fh, fw = cfg.height // s, cfg.width // s
    n = len(gt_boxes)
    obj = np.zeros((n, fh, fw))
    weight = np.ones((n, fh, fw))
    reg = np.zeros((n, 4, fh, fw))
    pos = np.zeros((n, fh, fw), dtype=bool)
    cy, cx = np.meshgrid((np.arange(fh) + 0.5) * s, (np.arange(fw) + 0.5) * s, indexing="ij")
    for b, boxes in enumerate(gt_boxes):
        for x0, y0, x1, y1 in np.asarray(boxes).reshape(-1, 4):
            bw, bh = x1 - x0, y1 - y0
            mx, my = (x0 + x1) / 2, (y0 + y1) / 2
            inside = (cx >= x0) & (cx < x1) & (cy >= y0) & (cy < y1)
            band = (np.abs(cx - mx) <= max(0.3 * bw, s / 2)) & \
                   (np.abs(cy - my) <= max(0.25 * bh, s / 2))
            r, c = min(int(my // s), fh - 1), min(int(mx // s), fw - 1)
            core = np.zeros_like(inside)
            core[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = True
            core &= inside
            core[r, c] = True
            obj[b][core] = 1.0
            p = band | core
            pos[b] |= p
            reg[b, 0][p] = (mx - cx[p]) / s
            reg[b, 1][p] = (my - cy[p]) / s
            reg[b, 2][p] = np.log(bw / s)
            reg[b, 3][p] = np.log(bh / s)
    return obj, weight, reg, pos


def _peaks(score: np.ndarray) -> np.ndarray:
    """Cells that are the maximum of their 3x3 neighbourhood."""
    padded = np.pad(score, 1, constant_values=-np.inf)
    h, w = score.shape
    best = np.max([padded[i:i + h, j:j + w] for i in range(3) for j in range(3)], axis=0)
    return score >= best


def detection_loss(raw: Tensor, targets) -> Tensor:
    obj, weight, reg, pos = targets
    loss = ad.bce_with_logits(raw[:, 0], obj, weight)
    if pos.any():
        n_idx, y_idx, x_idx = np.nonzero(pos)
        pred = raw[n_idx, 1:, y_idx, x_idx]  # (P, 4)
        tgt = reg.transpose(0, 2, 3, 1)[n_idx, y_idx, x_idx]
        loss = ad.add(loss, ad.smooth_l1(pred, tgt, beta=1.0 / 9))
    return loss


def detect(det: ToyDetector, image) -> tuple[Tensor, DetectionPrediction]:
    """Single image (1, H, W) -> (F_det (c, H/4, W/4), P_det)."""
    img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    h, w = img.shape[-2:]
    if h % det.cfg.stride or w % det.cfg.stride:
        raise ConfigurationError(f"image {h}x{w} not divisible by stride {det.cfg.stride}")
    f_det, raw = det.forward(Tensor(img.reshape(1, 1, h, w)))
    return f_det[0], decode_boxes(raw.data, det.cfg)[0]


# --- crops ---------------------------------------------------------------------------

def _sample_positions(lo: float, hi: float, n: int, stride: float) -> np.ndarray:
    a = lo / stride
    b = max(hi / stride - 1.0, a)
    return np.linspace(a, b, n)


def crop_region(image: np.ndarray, box, out_h: int, out_w: int, stride: float = 1.0
                ) -> np.ndarray:
    """Corner-aligned bilinear crop of ``box`` (pixel edges) from (C, H, W)."""
    x0, y0, x1, y1 = box
    ys = _sample_positions(y0, y1, out_h, stride)
    xs = _sample_positions(x0, x1, out_w, stride)
    from . import kernels
    return kernels.bilinear_gather(np.ascontiguousarray(image, dtype=np.float64), ys, xs)


def crop_region_tensor(fmap: Tensor, box, out_h: int, out_w: int, stride: float) -> Tensor:
    x0, y0, x1, y1 = box
    return ad.bilinear_resample(fmap, _sample_positions(y0, y1, out_h, stride),
                                _sample_positions(x0, x1, out_w, stride))


@dataclass
class CropSet:
    kept: list[int]  # indices into P_det
    skipped: list[int]


def valid_crop_indices(boxes: np.ndarray, height: int, width: int, min_size: float = 2.0
                       ) -> CropSet:
    b = clamp_boxes(boxes, height, width)
    ok = ((b[:, 2] - b[:, 0]) >= min_size) & ((b[:, 3] - b[:, 1]) >= min_size)
    kept = [int(i) for i in np.nonzero(ok)[0]]
    skipped = [int(i) for i in np.nonzero(~ok)[0]]
    if skipped:
        log.debug("skipping %d degenerate boxes", len(skipped))
    return CropSet(kept, skipped)


def crop_image(image: np.ndarray, p_det: DetectionPrediction) -> tuple[list[np.ndarray], CropSet]:
    """C_i: one (C, 32, 96) crop per non-degenerate box, in P_det order."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    sel = valid_crop_indices(p_det.boxes, h, w)
    boxes = clamp_boxes(p_det.boxes, h, w)
    return [crop_region(image, boxes[i], CROP_H, CROP_W) for i in sel.kept], sel


def crop_features(f_det: Tensor, p_det: DetectionPrediction, image_hw: tuple[int, int],
                  stride: int = 4) -> tuple[list[Tensor], CropSet]:
    """C_f: one (c_det, 8, 24) feature crop per non-degenerate box.

    Uses the same skip rule as :func:`crop_image` so the two lists pair up.
    """
    h, w = image_hw
    sel = valid_crop_indices(p_det.boxes, h, w)
    boxes = clamp_boxes(p_det.boxes, h, w)
    return [crop_region_tensor(f_det, boxes[i], FEAT_CROP_H, FEAT_CROP_W, stride)
            for i in sel.kept], sel


# --- recognizer -------------------------------------------------------------------------

class ToyRecognizer:
    def __init__(self, cfg: RecognizerConfig = RecognizerConfig(),
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(1)
        self.cfg = cfg
        d = cfg.dim
        w1, w2, w3 = cfg.widths
        s = self.store = ParameterStore()
        self.conv1 = Conv2d(s, "rec.backbone.conv1", 1, w1, 3, 1, 1, rng=rng)
        self.conv2 = Conv2d(s, "rec.backbone.conv2", w1, w2, 3, 2, 1, rng=rng)
        self.conv3 = Conv2d(s, "rec.backbone.conv3", w2, w3, 3, 2, 1, rng=rng)
        # each token sees its own feature column and one neighbour on either side
        self.column = Conv2d(s, "rec.backbone.column", w3, d, (CROP_H // 4, 3), rng=rng)
        self.norm = LayerNorm(s, "rec.backbone.norm", d)
        self.decoder = TransformerEncoderLayer(s, "rec.head.decoder", d, cfg.heads, rng=rng)
        self.head_norm = LayerNorm(s, "rec.head.norm", d)
        self.classifier = Linear(s, "rec.head.classifier", d, ALPHABET.num_classes, rng=rng)
        self.pe = positional_encoding(SEQ_LEN, d)

    def backbone(self, crops: Tensor) -> Tensor:
        """(N, 1, 32, 96) -> F_i (N, 24, d_rec)."""
        if crops.shape[1:] != (1, CROP_H, CROP_W):
            raise DimensionError(f"recognizer expects (N, 1, {CROP_H}, {CROP_W}), "
                                 f"got {crops.shape}")
        x = ad.relu(self.conv1(crops))
        x = ad.relu(self.conv2(x))
        x = ad.relu(self.conv3(x))
        pad = Tensor(np.zeros((x.shape[0], x.shape[1], x.shape[2], 1)))
        x = self.column(ad.concat([pad, x, pad], axis=3))  # (N, d, 1, 24)
        n, d = x.shape[:2]
        return self.norm(x.reshape(n, d, SEQ_LEN).transpose(0, 2, 1))

    def head(self, f_r: Tensor) -> Tensor:
        """F_r (N, 24, d_rec) -> logits (N, 24, classes)."""
        return self.classifier(self.head_norm(self.decoder(ad.add(f_r, Tensor(self.pe)))))

    def insert_adapters(self, rng=None):
        return insert_adapters(self.decoder, self.store, rng=rng)

    def adapter_norm_pattern(self) -> str:
        return "rec.*"


def greedy_decode(logits: np.ndarray) -> list[str]:
    """Collapse repeats then drop blanks, per sequence of (N, T, classes)."""
    ids = np.asarray(logits).argmax(axis=-1)
    out = []
    for row in ids:
        chars, prev = [], BLANK
        for k in row:
            if k != prev and k != BLANK:
                chars.append(int(k))
            prev = k
        out.append(ALPHABET.decode(chars))
    return out


def recognize(rec: ToyRecognizer, bridge: BridgeState | None, c_i, c_f=None
              ) -> tuple[Tensor, list[str]]:
    """Crop(s) -> (logits, decoded strings). Accepts single or batched crops."""
    c_i = c_i if isinstance(c_i, Tensor) else Tensor(c_i)
    single = c_i.ndim == 3
    if single:
        c_i = c_i.reshape(1, *c_i.shape)
        if c_f is not None:
            c_f = c_f.reshape(1, *c_f.shape)
    f_r = rec.backbone(c_i)
    if bridge is not None:
        if c_f is None:
            raise DimensionError("bridge present but no feature crop C_f given")
        f_r = bridge(f_r, c_f)
    logits = rec.head(f_r)
    texts = greedy_decode(logits.data)
    if single:
        logits = logits[0]
    return logits, texts


def column_targets(char_spans: list[tuple[float, float]], text: str, box,
                   seq: int = SEQ_LEN) -> np.ndarray:
    """Per-token class labels for a crop of ``box`` containing ``text``.

    Token ``t`` looks at crop columns [4t, 4t + 4); it is labelled with the glyph
    whose pixel span covers its centre, blank otherwise. Glyphs that no token
    centre hits are placed at the nearest free token so the layout still spells
    the full string whenever there is room. Adjacent identical glyphs are kept
    apart by a blank.
    """
    labels = np.full(seq, BLANK, dtype=np.intp)
    if not text:
        return labels
    x0, _, x1, _ = box
    step = max(x1 - 1 - x0, 1e-9) / (CROP_W - 1)
    centers = x0 + (CROP_W / seq * (np.arange(seq) + 0.5) - 0.5) * step
    ids = ALPHABET.encode(text)
    owner = np.full(seq, -1)
    for k, (a, b) in enumerate(char_spans):
        hit = (centers >= a - 0.5) & (centers <= b - 0.5)
        owner[hit & (owner == -1)] = k
    for k, (a, b) in enumerate(char_spans):
        if (owner == k).any():
            continue
        mid = (a + b) / 2 - 0.5
        lo = max([t for t in range(seq) if 0 <= owner[t] < k], default=-1) + 1
        hi = min([t for t in range(seq) if owner[t] > k], default=seq)
        free = [t for t in range(lo, hi) if owner[t] == -1]
        if not free:
            # borrow the edge token of a neighbour that owns at least two
            if lo > 0 and (owner == owner[lo - 1]).sum() > 1:
                free = [lo - 1]
            elif hi < seq and (owner == owner[hi]).sum() > 1:
                free = [hi]
        if free:
            t = min(free, key=lambda t: abs(centers[t] - mid))
            owner[t] = k
    for t in range(seq):
        if owner[t] >= 0:
            labels[t] = ids[owner[t]]
    # separate repeated characters
    for t in range(1, seq):
        if owner[t] >= 0 and owner[t - 1] >= 0 and owner[t] != owner[t - 1] \
                and labels[t] == labels[t - 1]:
            if (owner == owner[t]).sum() > 1:
                labels[t] = BLANK
                owner[t] = -1
            elif (owner == owner[t - 1]).sum() > 1:
                labels[t - 1] = BLANK
                owner[t - 1] = -1
    return labels


def recognition_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    n, t, k = logits.shape
    return ad.softmax_cross_entropy(logits.reshape(n * t, k), targets.reshape(-1))


# --- supervision and losses -----------------------------------------------------------

@dataclass
class Match:
    pred: int
    target: str
    gt: int
    iou: float


def greedy_match(pred_boxes: np.ndarray, gt_boxes: np.ndarray, threshold: float = 0.5
                 ) -> list[tuple[int, int, float]]:
    """One-to-one matching by descending IoU; pairs below ``threshold`` dropped."""
    if len(pred_boxes) == 0 or len(gt_boxes) == 0:
        return []
    iou = box_iou(pred_boxes, gt_boxes)
    pi, gi = np.nonzero(iou >= threshold)
    order = np.lexsort((gi, pi, -iou[pi, gi]))
    used_p, used_g, out = set(), set(), []
    for o in order:
        p, g = int(pi[o]), int(gi[o])
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        out.append((p, g, float(iou[p, g])))
    return out


def match_for_supervision(p_det: DetectionPrediction, gt_boxes: np.ndarray,
                          gt_texts: list[str], threshold: float = 0.5) -> list[Match]:
    return [Match(p, gt_texts[g], g, iou)
            for p, g, iou in greedy_match(p_det.boxes, gt_boxes, threshold)]


@dataclass(frozen=True)
class LossWeights:
    det: float = 1.0
    rec: float = 1.0


def total_loss(det_loss, rec_loss, w: LossWeights = LossWeights(), step: int | None = None):
    """``w.det * det_loss + w.rec * rec_loss``; aborts on non-finite input."""
    for label, v in (("det", det_loss), ("rec", rec_loss)):
        if v is None:
            continue
        val = v.item() if isinstance(v, Tensor) else float(v)
        if not np.isfinite(val):
            raise TrainingAbort(f"non-finite {label} loss {val} at step {step}")
    terms = []
    if det_loss is not None and w.det:
        terms.append(ad.scale(det_loss, w.det) if isinstance(det_loss, Tensor)
                     else w.det * det_loss)
    if rec_loss is not None and w.rec:
        terms.append(ad.scale(rec_loss, w.rec) if isinstance(rec_loss, Tensor)
                     else w.rec * rec_loss)
    if not terms:
        return 0.0
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


# --- pipeline ---------------------------------------------------------------------------

@dataclass
class Spotting:
    boxes: np.ndarray
    scores: np.ndarray
    texts: list[str]
    skipped: list[int] = field(default_factory=list)


class Spotter:
    """Detector -> crops -> recognizer, optionally fused through a bridge."""

    chunk = 128  # crops per recognizer call, bounds peak memory

    def __init__(self, detector: ToyDetector, recognizer: ToyRecognizer,
                 bridge: BridgeState | None = None):
        self.detector, self.recognizer, self.bridge = detector, recognizer, bridge

    def spot_batch(self, images: np.ndarray) -> list[Spotting]:
        images = np.asarray(images, dtype=np.float64)
        h, w = images.shape[-2:]
        with ad.no_grad():
            f_det, raw = self.detector.forward(Tensor(images))
            preds = decode_boxes(raw.data, self.detector.cfg)
            crops, feats, owners, sels = [], [], [], []
            for b, p in enumerate(preds):
                c_i, sel = crop_image(images[b], p)
                crops.extend(c_i)
                if self.bridge is not None:
                    c_f, _ = crop_features(f_det[b], p, (h, w), self.detector.cfg.stride)
                    feats.extend(c_f)
                owners.extend([b] * len(sel.kept))
                sels.append(sel)
            texts: list[str] = []
            for k in range(0, len(crops), self.chunk):
                c_f = ad.stack(feats[k:k + self.chunk]) if feats else None
                texts += recognize(self.recognizer, self.bridge,
                                   Tensor(np.stack(crops[k:k + self.chunk])), c_f)[1]
        out, k = [], 0
        for b, p in enumerate(preds):
            sel = sels[b]
            t = texts[k:k + len(sel.kept)]
            k += len(sel.kept)
            out.append(Spotting(p.boxes[sel.kept], p.scores[sel.kept], t, sel.skipped))
        return out

    def spot(self, image: np.ndarray) -> Spotting:
        return self.spot_batch(np.asarray(image)[None])[0]
