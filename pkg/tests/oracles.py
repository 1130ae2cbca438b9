"""Independent oracles for the detection metrics, shared by the unit and
acceptance suites. Deliberately written as naive loops (no vectorization, no
code shared with the library) so they can confirm the production path."""

import itertools

from sdrmri.detect import iou


def _envelope_ap(flags, n_gt_total):
    """All-points AP from TP/FP flags: Riemann sum over the right-to-left
    precision envelope."""
    tp = fp = 0
    points = []
    for hit in flags:
        tp, fp = tp + hit, fp + (not hit)
        points.append((tp / n_gt_total, tp / (tp + fp)))
    best_after = 0.0
    env = []
    for rec, prec in reversed(points):
        best_after = max(best_after, prec)
        env.append((rec, best_after))
    env.reverse()
    ap = 0.0
    prev = 0.0
    for rec, prec in env:
        ap += (rec - prev) * prec
        prev = rec
    return ap


def mirror_greedy_ap(dets, gts, thr, n_gt_total):
    """Score-ordered greedy matching (each detection claims the unmatched
    same-class ground truth of highest IoU) followed by the AP sum."""
    order = sorted(range(len(dets)), key=lambda k: (-dets[k][0], k))
    taken = set()
    flags = []
    for k in order:
        _score, box, cls = dets[k]
        best, best_v = None, -1.0
        for g, (gbox, gcls) in enumerate(gts):
            if g in taken or gcls != cls:
                continue
            v = iou(box, gbox)
            if v >= thr and v > best_v:
                best, best_v = g, v
        if best is not None:
            taken.add(best)
            flags.append(True)
        else:
            flags.append(False)
    return _envelope_ap(flags, n_gt_total)


def enumerate_max_ap(dets, gts, thr, n_gt_total):
    """Upper bound: best AP over every feasible injective matching."""
    order = sorted(range(len(dets)), key=lambda k: (-dets[k][0], k))
    feasible = []
    for k in order:
        _score, box, cls = dets[k]
        opts = [g for g, (gbox, gcls) in enumerate(gts)
                if gcls == cls and iou(box, gbox) >= thr]
        feasible.append(opts + [None])
    best = 0.0
    for assign in itertools.product(*feasible):
        used = [g for g in assign if g is not None]
        if len(used) != len(set(used)):
            continue
        flags = [g is not None for g in assign]
        best = max(best, _envelope_ap(flags, n_gt_total))
    return best
