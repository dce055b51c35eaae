"""Point-level semantic and panoptic metrics (mIoU, mAcc, PRQ thing/stuff)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labels import LabelSet

MATCH_IOU = 0.5


@dataclass
class ClassStats:
    name: str
    is_thing: bool
    iou: float
    acc: float
    tp: int
    fp: int
    fn: int
    seg_tp: int = 0
    seg_fp: int = 0
    seg_fn: int = 0
    matched_iou_sum: float = 0.0


@dataclass
class PanopticReport:
    miou: float
    macc: float
    prq_thing: float
    prq_stuff: float
    per_class: dict[int, ClassStats] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "miou": self.miou,
            "macc": self.macc,
            "prq_thing": self.prq_thing,
            "prq_stuff": self.prq_stuff,
            "per_class": {
                s.name: {
                    "id": cid,
                    "thing": s.is_thing,
                    "iou": s.iou,
                    "acc": s.acc,
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                    "seg_tp": s.seg_tp,
                    "seg_fp": s.seg_fp,
                    "seg_fn": s.seg_fn,
                    "matched_iou_sum": s.matched_iou_sum,
                }
                for cid, s in sorted(self.per_class.items())
            },
        }

    def table(self) -> str:
        lines = [f"{'class':<16}{'kind':<7}{'IoU':>8}{'Acc':>8}{'TP':>6}{'FP':>6}{'FN':>6}"]
        for _, s in sorted(self.per_class.items()):
            lines.append(
                f"{s.name:<16}{'thing' if s.is_thing else 'stuff':<7}{100 * s.iou:8.2f}{100 * s.acc:8.2f}"
                f"{s.seg_tp:6d}{s.seg_fp:6d}{s.seg_fn:6d}"
            )
        lines.append(
            f"mIoU {100 * self.miou:.2f}  mAcc {100 * self.macc:.2f}  "
            f"PRQ(T) {100 * self.prq_thing:.2f}  PRQ(S) {100 * self.prq_stuff:.2f}"
        )
        return "\n".join(lines)


def _segment_match(gt_seg: np.ndarray, pred_seg: np.ndarray):
    """Match segment ids of two aligned labelings (0 = none) by IoU > 0.5.

    Returns (matched IoUs, #gt segments, #pred segments).
    """
    g_ids, g_cnt = np.unique(gt_seg[gt_seg > 0], return_counts=True)
    p_ids, p_cnt = np.unique(pred_seg[pred_seg > 0], return_counts=True)
    both = (gt_seg > 0) & (pred_seg > 0)
    pairs, inter = np.unique(np.stack([gt_seg[both], pred_seg[both]], axis=1), axis=0, return_counts=True)
    g_size = dict(zip(g_ids.tolist(), g_cnt.tolist()))
    p_size = dict(zip(p_ids.tolist(), p_cnt.tolist()))
    ious = []
    for (g, p), n in zip(pairs.tolist(), inter.tolist()):
        iou = n / (g_size[g] + p_size[p] - n)
        if iou > MATCH_IOU:
            ious.append(iou)
    return ious, len(g_ids), len(p_ids)


def compute_metrics(pred_cls, pred_inst, gt_cls, gt_inst, labels: LabelSet) -> PanopticReport:
    """Metrics over GT points with class > 0.

    Unlabeled predictions (class 0) count only as misses. PRQ pools matched IoU
    over a class set: sum(IoU) / (TP + FP/2 + FN/2).
    """
    pred_cls = np.asarray(pred_cls, dtype=np.int64)
    pred_inst = np.asarray(pred_inst, dtype=np.int64)
    gt_cls = np.asarray(gt_cls, dtype=np.int64)
    gt_inst = np.asarray(gt_inst, dtype=np.int64)
    if not (len(pred_cls) == len(pred_inst) == len(gt_cls) == len(gt_inst)):
        raise ValueError("predictions and ground truth must be aligned")
    unknown = sorted(set(np.unique(pred_cls).tolist()) - {0} - set(labels.class_ids))
    if unknown:
        raise ValueError(f"predicted class {unknown[0]} is not in the label set")
    missing_gt = sorted(set(np.unique(gt_cls).tolist()) - {0} - set(labels.class_ids))
    if missing_gt:
        raise ValueError(f"ground-truth class {missing_gt[0]} is not in the label set")

    valid = gt_cls > 0
    pc, pi, gc, gi = pred_cls[valid], pred_inst[valid], gt_cls[valid], gt_inst[valid]
    per_class = {}
    for cid in sorted(set(np.unique(gc).tolist())):
        info = labels.entries[cid]
        is_gt = gc == cid
        is_pred = pc == cid
        tp = int(np.sum(is_gt & is_pred))
        fp = int(np.sum(~is_gt & is_pred))
        fn = int(np.sum(is_gt & ~is_pred))
        per_class[cid] = ClassStats(info.name, info.is_thing, tp / (tp + fp + fn), tp / int(is_gt.sum()), tp, fp, fn)

    # predicted classes absent from GT still produce false-positive segments
    pred_classes = set(np.unique(pc[pc > 0]).tolist())
    prq = {True: [0.0, 0, 0, 0], False: [0.0, 0, 0, 0]}  # iou_sum, tp, fp, fn
    for cid in sorted(set(per_class) | pred_classes):
        thing = labels.entries[cid].is_thing
        if thing:
            gseg = np.where(gc == cid, gi + 1, 0)  # +1 keeps instance 0 distinct from "none"
            pseg = np.where((pc == cid) & (pi > 0), pi, 0)
        else:
            gseg = (gc == cid).astype(np.int64)
            pseg = (pc == cid).astype(np.int64)
        ious, n_g, n_p = _segment_match(gseg, pseg)
        acc = prq[thing]
        acc[0] += float(np.sum(ious))
        acc[1] += len(ious)
        acc[2] += n_p - len(ious)
        acc[3] += n_g - len(ious)
        if cid in per_class:
            s = per_class[cid]
            s.seg_tp, s.seg_fp, s.seg_fn = len(ious), n_p - len(ious), n_g - len(ious)
            s.matched_iou_sum = float(np.sum(ious))

    def pq(acc):
        denom = acc[1] + 0.5 * acc[2] + 0.5 * acc[3]
        return acc[0] / denom if denom > 0 else 0.0

    ious = [s.iou for s in per_class.values()]
    accs = [s.acc for s in per_class.values()]
    return PanopticReport(
        miou=float(np.mean(ious)) if ious else 0.0,
        macc=float(np.mean(accs)) if accs else 0.0,
        prq_thing=pq(prq[True]),
        prq_stuff=pq(prq[False]),
        per_class=per_class,
    )
