"""Release gate: one test per acceptance criterion.

Every test prints a single [acceptance] line so a plain pytest run doubles
as the release checklist. Timed criteria print the measured wall time next
to their budget. Oracles here are deliberately independent of the package
internals: plain-python set arithmetic, union-find, permutation search, and
scalar loops.
"""

import itertools
import json
import math
import time
from dataclasses import replace

import numpy as np

from panvox import (
    BinaryMask3D,
    CategoryMatches,
    ClusterParams,
    DecoderConfig,
    DecoderWeights,
    FovMask,
    GridDims,
    InstanceGrid,
    MaskLogits3D,
    MaskPrediction,
    MergeConfig,
    Segment,
    SegmentMatchReport,
    SemanticGrid,
    attention_layer,
    ball_offsets,
    dice_loss,
    euclidean_cluster,
    focal_loss,
    forward_stack,
    greedy_match,
    hungarian,
    layer_predictions,
    load_decoder_weights,
    load_fov_mask,
    load_instance_grid,
    load_mask_logits,
    load_mask_set,
    load_semantic_grid,
    merge_with_log,
    panoptic_scores,
    save_decoder_weights,
    save_grid,
    save_mask_set,
    semantic_kitti,
    zero_foreground,
)
from panvox.cli import main as cli_main


def _report(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance] {name}: {status}{suffix}")
    return ok


# Published per-category results of three scene completion systems, in
# percent, one (PRQ, RSQ, RRQ) triple per category.
PUBLISHED_SCORES = {
    "system-a": {
        "car": (16.38, 35.65, 45.95),
        "truck": (13.26, 33.34, 39.78),
        "other-vehicle": (4.17, 30.07, 13.87),
        "road": (57.90, 59.00, 98.13),
    },
    "system-b": {
        "car": (14.73, 41.03, 35.90),
        "truck": (4.06, 25.89, 15.67),
        "other-vehicle": (0.74, 25.77, 2.88),
        "road": (57.79, 58.63, 98.58),
    },
    "system-c": {
        "car": (16.95, 41.68, 40.68),
        "truck": (0.0, 0.0, 0.0),
        "other-vehicle": (2.21, 28.82, 7.68),
        "road": (56.59, 58.20, 97.22),
    },
}


def _random_match_report(rng):
    """A SegmentMatchReport with arbitrary counts and IoU values."""
    cats = tuple(int(c) for c in rng.choice(19, size=int(rng.integers(1, 5)),
                                            replace=False) + 1)
    per = {}
    for c in cats:
        cm = CategoryMatches(fp=int(rng.integers(0, 6)), fn=int(rng.integers(0, 6)))
        for k in range(int(rng.integers(0, 5))):
            p = Segment(c, k + 1, rng.integers(0, 4096, size=int(rng.integers(1, 9))))
            g = Segment(c, k + 1, rng.integers(0, 4096, size=int(rng.integers(1, 9))))
            cm.tp_pairs.append((p, g, float(rng.uniform(0.2, 1.0))))
        per[c] = cm
    return SegmentMatchReport(per, cats)


def test_published_score_decomposition():
    t0 = time.perf_counter()
    problems = []
    rows = 0
    for system, table in PUBLISHED_SCORES.items():
        for cat, (prq, rsq, rrq) in table.items():
            rows += 1
            recomposed = rsq * rrq / 100.0
            if abs(prq - recomposed) > 0.01 + 1e-9:
                problems.append(f"{system}/{cat}: {prq} vs {recomposed:.4f}")
    rng = np.random.default_rng(8001)
    for _ in range(1000):
        scores = panoptic_scores(_random_match_report(rng))
        for c, sc in scores.per_category.items():
            if sc.prq is None:
                continue
            if abs(sc.prq - sc.rsq * sc.rrq) > 1e-12:
                problems.append(f"category {c}: prq {sc.prq} != rsq*rrq")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 5.0
    assert _report("score-decomposition", ok,
                   f"{rows} published rows, 1000 random reports, {dt:.2f}s < 5s"), problems


def test_assignment_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8002)
    problems = []
    for trial in range(500):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, n + 1))
        costs = rng.integers(-20, 50, size=(n, m)).astype(np.float64)
        rows, cols = hungarian(costs)
        total = float(costs[rows, cols].sum())
        perms = np.array(list(itertools.permutations(range(n), m)))
        best = float(costs[perms, np.arange(m)].sum(axis=1).min())
        if total != best:
            problems.append(f"trial {trial}: {total} != optimal {best}")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 30.0
    assert _report("assignment-optimality", ok,
                   f"500 matrices up to 7x7, {dt:.2f}s < 30s"), problems


def _oracle_greedy(preds, gts, iou_min, ignore_bits, categories):
    """Set-based greedy matching on an explicit IoU matrix."""
    ignored = (set(np.flatnonzero(ignore_bits.reshape(-1)).tolist())
               if ignore_bits is not None else set())
    out = {}
    for c in categories:
        pc = [s for s in preds if s.class_id == c]
        gc = [s for s in gts if s.class_id == c]
        pv = [set(s.voxels.tolist()) - ignored for s in pc]
        gv = [set(s.voxels.tolist()) - ignored for s in gc]
        iou = [[0.0] * len(gc) for _ in pc]
        for i, a in enumerate(pv):
            for j, b in enumerate(gv):
                inter = len(a & b)
                union = len(a) + len(b) - inter
                iou[i][j] = inter / union if union else 0.0
        used_p, used_g = set(), set()
        pairs = []
        while True:
            best, best_v = None, -math.inf
            for i in range(len(pc)):
                if i in used_p:
                    continue
                for j in range(len(gc)):
                    if j in used_g:
                        continue
                    if iou[i][j] > best_v:  # strict: first maximum wins ties
                        best, best_v = (i, j), iou[i][j]
            if best is None or best_v < iou_min:
                break
            pairs.append((best[0], best[1], best_v))
            used_p.add(best[0])
            used_g.add(best[1])
        out[c] = (pairs, len(pc) - len(used_p), len(gc) - len(used_g))
    return out


def test_greedy_matching_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8003)
    categories = (1, 4, 9)
    problems = []
    for scene in range(200):
        dims = GridDims(*(int(rng.integers(4, 17)) for _ in range(3)), 0.2)
        count = dims.voxel_count

        def make_side():
            segs = []
            for k in range(int(rng.integers(0, 7))):
                c = int(rng.choice(categories))
                size = int(rng.integers(0, max(2, count // 3)))
                vox = (rng.choice(count, size=size, replace=False)
                       if size else np.empty(0, np.int64))
                segs.append(Segment(c, k + 1, vox))
            return segs

        preds, gts = make_side(), make_side()
        ignore = None
        if rng.random() < 0.3:
            ignore = BinaryMask3D(dims, rng.random(dims.shape) < 0.2)
        iou_min = float(rng.choice((0.2, 0.25, 0.5)))
        report = greedy_match(preds, gts, iou_min, ignore, categories)
        bits = ignore.bits if ignore is not None else None
        expected = _oracle_greedy(preds, gts, iou_min, bits, categories)
        for c in categories:
            cm = report.per_category[c]
            pc = [s for s in preds if s.class_id == c]
            gc = [s for s in gts if s.class_id == c]
            p_index = {id(s): i for i, s in enumerate(pc)}
            g_index = {id(s): j for j, s in enumerate(gc)}
            got = [(p_index[id(p)], g_index[id(g)], v) for p, g, v in cm.tp_pairs]
            want_pairs, want_fp, want_fn = expected[c]
            if got != want_pairs or cm.fp != want_fp or cm.fn != want_fn:
                problems.append(f"scene {scene} category {c}: {got} vs {want_pairs}")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 30.0
    assert _report("greedy-matching", ok,
                   f"200 scenes vs set-based oracle, {dt:.2f}s < 30s"), problems


def test_merge_golden_trace(golden_dir, tmp_path):
    t0 = time.perf_counter()
    sem_out = tmp_path / "sem.bin"
    inst_out = tmp_path / "inst.bin"
    report_out = tmp_path / "merge.json"
    rc = cli_main([
        "merge",
        "--background", str(golden_dir / "background.bin"),
        "--fov", str(golden_dir / "fov.bin"),
        "--masks", str(golden_dir / "masks.vpms"),
        "--out-semantic", str(sem_out),
        "--out-instance", str(inst_out),
        "--out", str(report_out),
    ])
    problems = []
    if rc != 0:
        problems.append(f"exit code {rc}")
    for got, want in ((sem_out, "expected_semantic.bin"), (inst_out, "expected_instance.bin")):
        if got.read_bytes() != (golden_dir / want).read_bytes():
            problems.append(f"{want}: payload differs")
        if (got.parent / (got.name + ".json")).read_bytes() \
                != (golden_dir / (want + ".json")).read_bytes():
            problems.append(f"{want}: manifest differs")
    report = json.loads(report_out.read_text())
    reasons = sorted(r["reason"] for r in report["records"] if not r["kept"])
    if reasons != ["fov", "overlap", "score"]:
        problems.append(f"discard reasons {reasons}")
    kept_ids = [r["instance_id"] for r in report["records"] if r["kept"]]
    if sorted(kept_ids) != [1, 2]:
        problems.append(f"kept ids {kept_ids}")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 1.0
    assert _report("merge-golden-trace", ok,
                   f"byte-identical, all discard branches, {dt:.2f}s < 1s"), problems


def _check_merge_invariants(bg, sem, inst, records, cfg, thing_lut, problems, tag):
    ids = inst.ids
    labels = sem.labels
    is_thing = thing_lut[labels]
    if not np.array_equal(ids > 0, is_thing):
        problems.append(f"{tag}: instance ids and thing labels disagree")
    if not np.array_equal(labels[ids == 0], bg.labels[ids == 0]):
        problems.append(f"{tag}: background voxels were rewritten")
    kept = [r for r in records if r.kept]
    if sorted(r.instance_id for r in kept) != list(range(1, len(kept) + 1)):
        problems.append(f"{tag}: kept ids not compact")
    by_id = sorted(kept, key=lambda r: r.instance_id)
    scores = [r.score for r in by_id]
    if any(a < b for a, b in zip(scores, scores[1:])):
        problems.append(f"{tag}: id order does not follow descending score")
    claimed_total = 0
    for r in by_id:
        owned = ids == r.instance_id
        n = int(np.count_nonzero(owned))
        claimed_total += n
        if n != r.claimed_voxels:
            problems.append(f"{tag}: id {r.instance_id} owns {n} != {r.claimed_voxels}")
        if not (labels[owned] == r.class_id).all():
            problems.append(f"{tag}: id {r.instance_id} labels are inconsistent")
        if not (r.score > cfg.t_q and r.overlap_ratio > cfg.t_overlap
                and r.fov_ratio > cfg.t_fov):
            problems.append(f"{tag}: kept mask violates a threshold")
    if claimed_total != int(np.count_nonzero(ids > 0)):
        problems.append(f"{tag}: claimed voxels overlap")
    for r in records:
        if r.kept:
            continue
        if r.reason == "score" and not (r.score <= cfg.t_q and r.mask_voxels is None):
            problems.append(f"{tag}: bad score discard record")
        if r.reason == "overlap" and not r.overlap_ratio <= cfg.t_overlap:
            problems.append(f"{tag}: bad overlap discard record")
        if r.reason == "fov" and not r.fov_ratio <= cfg.t_fov:
            problems.append(f"{tag}: bad fov discard record")


def test_merge_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8005)
    tax = semantic_kitti()
    thing_lut = np.zeros(65536, bool)
    thing_lut[list(tax.thing_ids)] = True
    problems = []
    for scene in range(200):
        hq, wq, dq = (int(rng.integers(2, 5)) for _ in range(3))
        f = int(rng.choice((1, 2, 4)))
        dims = GridDims(hq * f, wq * f, dq * f, 0.2)
        qdims = GridDims(hq, wq, dq, 0.2 * f)
        raw = rng.choice(np.array([0, 9, 15, 1], np.uint16), size=dims.shape,
                         p=[0.55, 0.2, 0.2, 0.05])
        bg = zero_foreground(SemanticGrid(dims, raw), tax)
        fov = FovMask(dims, rng.random(dims.shape) < 0.85)
        preds = []
        for _ in range(int(rng.integers(3, 7))):
            vals = rng.normal(0.0, 0.6, qdims.shape).astype(np.float32)
            x0, y0, z0 = (int(rng.integers(0, s)) for s in qdims.shape)
            vals[x0:, y0:, z0:] += 1.0
            preds.append(MaskPrediction(rng.uniform(0.01, 0.99, 8),
                                        MaskLogits3D(qdims, vals)))
        kept_sets = []
        for t_q in (0.2, 0.5, 0.9):
            cfg = MergeConfig(t_q=t_q)
            sem, inst, records = merge_with_log(bg, fov, preds, cfg, tax)
            _check_merge_invariants(bg, sem, inst, records, cfg, thing_lut,
                                    problems, f"scene {scene} t_q {t_q}")
            kept_sets.append({r.index for r in records if r.kept})
        if not (kept_sets[2] <= kept_sets[1] <= kept_sets[0]):
            problems.append(f"scene {scene}: raising t_q is not monotone")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 60.0
    assert _report("merge-invariants", ok,
                   f"200 scenes x 3 thresholds, {dt:.2f}s < 60s"), problems[:5]


def _ball_size_bruteforce(radius):
    r = int(math.floor(radius))
    n = 0
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dz in range(-r, r + 1):
                d2 = dx * dx + dy * dy + dz * dz
                if 0 < d2 <= radius * radius:
                    n += 1
    return n


def _oracle_components(labels, cid, radius, shape):
    """Union-find connected components of one class, as flat-index sets."""
    coords = np.argwhere(labels == cid)
    n = len(coords)
    if n == 0:
        return []
    flat = np.ravel_multi_index((coords[:, 0], coords[:, 1], coords[:, 2]), shape)
    pos = np.full(int(np.prod(shape)), -1, np.int64)
    pos[flat] = np.arange(n)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    r = int(math.floor(radius))
    for off in itertools.product(range(-r, r + 1), repeat=3):
        d2 = off[0] ** 2 + off[1] ** 2 + off[2] ** 2
        if not 0 < d2 <= radius * radius:
            continue
        cand = coords + off
        valid = ((cand >= 0) & (cand < np.array(shape))).all(axis=1)
        src = np.flatnonzero(valid)
        nb = pos[np.ravel_multi_index(tuple(cand[valid].T), shape)]
        hit = nb >= 0
        for a, b in zip(src[hit].tolist(), nb[hit].tolist()):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    groups = {}
    for k in range(n):
        groups.setdefault(find(k), []).append(k)
    return [frozenset(flat[g].tolist()) for g in groups.values()]


def test_clustering_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8006)
    tax = semantic_kitti()
    defaults = ClusterParams.for_taxonomy(tax)
    alt = ClusterParams(min_cluster_voxels=2, default_radius=2.0)
    problems = []
    ball_ok = (len(ball_offsets(2.0)) == _ball_size_bruteforce(2.0) == 32
               and len(ball_offsets(3.0)) == _ball_size_bruteforce(3.0) == 122)
    if not ball_ok:
        problems.append("offset ball sizes differ from enumeration")
    for scene in range(200):
        lo = 12 if scene % 10 == 0 else 4
        dims = GridDims(*(int(rng.integers(lo, 17)) for _ in range(3)), 0.2)
        labels = rng.choice(np.array([0, 1, 6, 9], np.uint16), size=dims.shape,
                            p=[0.72, 0.12, 0.10, 0.06])
        if scene % 10 == 0:
            labels[1:12, 1:12, 1:10] = 6  # 1089 voxels, above the person cap
        params = defaults if scene % 2 == 0 else alt
        inst = euclidean_cluster(SemanticGrid(dims, labels), tax, params)
        flat_ids = inst.ids.reshape(-1)
        flat_lab = labels.reshape(-1)
        total_kept = 0
        for cid in (1, 6):
            cap = params.max_for(cid)
            comps = _oracle_components(labels, cid, params.radius_for(cid), dims.shape)
            want = {fs for fs in comps
                    if len(fs) >= params.min_cluster_voxels
                    and (cap is None or len(fs) <= cap)}
            got = set()
            for i in np.unique(flat_ids[(flat_lab == cid) & (flat_ids > 0)]):
                members = np.flatnonzero(flat_ids == i)
                if not (flat_lab[members] == cid).all():
                    problems.append(f"scene {scene}: id {i} spans classes")
                got.add(frozenset(members.tolist()))
            if got != want:
                problems.append(f"scene {scene} class {cid}: components differ")
            total_kept += sum(len(fs) for fs in want)
        if total_kept != int(np.count_nonzero(flat_ids)):
            problems.append(f"scene {scene}: stray instance ids")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 30.0
    assert _report("clustering-oracle", ok,
                   f"200 grids vs union-find, balls 32/122, {dt:.2f}s < 30s"), problems[:5]


def test_loss_hand_values():
    problems = []
    dims = GridDims(2, 2, 1)
    logits = MaskLogits3D(dims, np.array([[[40.0], [40.0]], [[-40.0], [-40.0]]], np.float32))
    gt = BinaryMask3D(dims, np.array([[[True], [False]], [[False], [False]]]))
    if abs(dice_loss(logits, gt) - 0.25) > 1e-9:
        problems.append(f"dice {dice_loss(logits, gt)} != 0.25")
    focal = focal_loss(np.array([0.5]), 0, gamma=2.0, alpha=0.25)
    if abs(focal - 0.25 * 0.25 * math.log(2.0)) > 1e-9:
        problems.append(f"focal {focal} != 0.25*0.25*ln2")
    rng = np.random.default_rng(8007)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        p = rng.uniform(0.01, 0.99, n)
        cls = None if rng.random() < 0.3 else int(rng.integers(0, n))
        t = np.zeros(n)
        if cls is not None:
            t[cls] = 1.0
        bce = float(np.sum(-t * np.log(p) - (1 - t) * np.log(1 - p)))
        got = focal_loss(p, cls, gamma=0.0, alpha=0.5)
        if abs(got - 0.5 * bce) > 1e-9:
            problems.append(f"focal(gamma=0, alpha=0.5) {got} != bce/2 {0.5 * bce}")
    ok = not problems
    assert _report("loss-hand-values", ok,
                   "dice 0.25, focal 0.25*0.25*ln2, 100x half-BCE"), problems


def test_decoder_forward():
    t0 = time.perf_counter()
    problems = []
    rng = np.random.default_rng(8008)

    # Structural checks on a small seeded instance.
    small = DecoderConfig(num_queries=16, num_heads=4, num_layers=1, embed_dim=32,
                          pos_dim=24, voxel_dims=GridDims(8, 8, 4, 0.8), seed=11)
    sw = DecoderWeights.random(small, 8)
    sq = rng.standard_normal((16, 32))
    sf = rng.standard_normal((256, 32)).astype(np.float32)
    lw = sw.layers[0]
    att, refined = attention_layer(sq, sf, lw, small.num_heads)
    values = sf.astype(np.float64) @ lw.value_w.astype(np.float64) + lw.value_b
    dk = small.head_dim
    for h in range(small.num_heads):
        sl = slice(h * dk, (h + 1) * dk)
        a = att[:, h, :].astype(np.float64)
        a -= a.max(axis=1, keepdims=True)
        np.exp(a, out=a)
        sums = (a / a.sum(axis=1, keepdims=True)).sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            problems.append(f"small head {h}: softmax rows do not sum to 1")
        lo = values[:, sl].min(axis=0) - 1e-6
        hi = values[:, sl].max(axis=0) + 1e-6
        seg = refined[:, sl]
        if not ((seg >= lo).all() and (seg <= hi).all()):
            problems.append(f"small head {h}: refined queries leave the value hull")
    s = 4.0  # sqrt(s) = 2 keeps the scaled inputs exactly representable
    scaled = replace(lw, key_w=lw.key_w * math.sqrt(s), key_b=lw.key_b * math.sqrt(s))
    att2, _ = attention_layer(sq * math.sqrt(s), sf, scaled, small.num_heads)
    if not np.allclose(att2, s * att, rtol=1e-6, atol=1e-6):
        problems.append("bilinear scaling property violated")

    # Full-size seeded forward, then the mask set flows through merge.
    tax = semantic_kitti()
    cfg = DecoderConfig()
    weights = DecoderWeights.random(cfg, len(tax.thing_ids))
    feats = np.random.default_rng(1234).standard_normal(
        (cfg.voxel_dims.voxel_count, cfg.embed_dim)).astype(np.float32)
    t_fwd = time.perf_counter()
    outputs = forward_stack(cfg, weights, feats)
    dt_fwd = time.perf_counter() - t_fwd
    if dt_fwd >= 10.0:
        problems.append(f"forward took {dt_fwd:.2f}s")
    for h in range(cfg.num_heads):
        a = outputs[0].attention_maps[:, h, :].astype(np.float64)
        a -= a.max(axis=1, keepdims=True)
        np.exp(a, out=a)
        sums = (a / a.sum(axis=1, keepdims=True)).sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            problems.append(f"full head {h}: softmax rows do not sum to 1")
    preds = layer_predictions(outputs[-1])
    del outputs
    full_dims = GridDims(256, 256, 32, 0.2)
    bg = SemanticGrid.filled(full_dims, tax.free_id)
    sem, inst, records = merge_with_log(bg, FovMask.full(full_dims), preds,
                                        MergeConfig(), tax)
    if sem.dims != full_dims or inst.dims != full_dims or len(records) != 300:
        problems.append("decoder mask set did not flow through merge")
    dt = time.perf_counter() - t0
    ok = not problems
    assert _report("decoder-forward", ok,
                   f"forward {dt_fwd:.2f}s < 10s, merge bridged, total {dt:.2f}s"), problems


def test_cli_performance(tmp_path):
    rng = np.random.default_rng(8009)
    tax = semantic_kitti()
    dims = GridDims(256, 256, 32, 0.2)
    qdims = GridDims(64, 64, 8, 0.8)
    labels = np.zeros(dims.shape, np.uint16)
    labels[:, :, :2] = 9
    veg = (rng.random(dims.shape) < 0.05) & (labels == 0)
    labels[veg] = 15
    bg_path = tmp_path / "bg.bin"
    save_grid(bg_path, SemanticGrid(dims, labels))
    preds = []
    for _ in range(300):
        vals = rng.normal(-2.5, 0.3, qdims.shape).astype(np.float32)
        x0 = int(rng.integers(0, 54))
        y0 = int(rng.integers(0, 54))
        z0 = int(rng.integers(2, 4))
        bx = int(rng.integers(6, 11))
        by = int(rng.integers(6, 11))
        bz = int(rng.integers(3, 6))
        vals[x0:x0 + bx, y0:y0 + by, z0:z0 + bz] = rng.normal(
            1.1, 0.2, (bx, by, bz)).astype(np.float32)
        preds.append(MaskPrediction(rng.uniform(0.3, 0.95, len(tax.thing_ids)),
                                    MaskLogits3D(qdims, vals)))
    masks_path = tmp_path / "masks.vpms"
    save_mask_set(masks_path, preds)
    sem_out = tmp_path / "sem.bin"
    inst_out = tmp_path / "inst.bin"
    t0 = time.perf_counter()
    rc_merge = cli_main([
        "merge", "--background", str(bg_path), "--masks", str(masks_path),
        "--out-semantic", str(sem_out), "--out-instance", str(inst_out),
        "--out", str(tmp_path / "merge.json"),
    ])
    dt_merge = time.perf_counter() - t0
    t0 = time.perf_counter()
    rc_eval = cli_main([
        "eval-panoptic",
        "--pred-semantic", str(sem_out), "--pred-instance", str(inst_out),
        "--gt-semantic", str(sem_out), "--gt-instance", str(inst_out),
        "--out", str(tmp_path / "eval.json"),
    ])
    dt_eval = time.perf_counter() - t0
    problems = []
    if rc_merge != 0:
        problems.append(f"merge exit code {rc_merge}")
    if rc_eval != 0:
        problems.append(f"eval exit code {rc_eval}")
    if dt_merge >= 2.0:
        problems.append(f"merge took {dt_merge:.2f}s")
    if dt_eval >= 1.0:
        problems.append(f"eval took {dt_eval:.2f}s")
    ok = not problems
    assert _report("cli-performance", ok,
                   f"merge {dt_merge:.2f}s < 2s, eval-panoptic {dt_eval:.2f}s < 1s"), problems


def test_io_round_trips(tmp_path):
    rng = np.random.default_rng(8010)
    problems = []

    def grid_round_trip(name, grid, loader):
        first = tmp_path / f"{name}.bin"
        second = tmp_path / f"{name}_again.bin"
        save_grid(first, grid)
        save_grid(second, loader(first))
        same_payload = first.read_bytes() == second.read_bytes()
        same_manifest = ((first.parent / (first.name + ".json")).read_bytes()
                         == (second.parent / (second.name + ".json")).read_bytes())
        if not (same_payload and same_manifest):
            problems.append(f"{name}: bytes differ")

    dims = GridDims(6, 5, 4, 0.2)
    labels = rng.integers(0, 20, dims.shape).astype(np.uint16)
    labels[0, 0, 0] = 255
    grid_round_trip("semantic", SemanticGrid(dims, labels), load_semantic_grid)
    ids = rng.integers(0, 9, dims.shape).astype(np.uint32)
    grid_round_trip("instance", InstanceGrid(dims, ids), load_instance_grid)
    grid_round_trip("fov", FovMask(dims, rng.random(dims.shape) < 0.5), load_fov_mask)
    vals = rng.normal(0, 1, dims.shape).astype(np.float32)
    vals[1, 1, 1] = -0.0
    grid_round_trip("logits", MaskLogits3D(dims, vals), load_mask_logits)

    def masks(scored):
        out = []
        for _ in range(4):
            p = MaskPrediction(rng.uniform(0.01, 0.99, 8),
                               MaskLogits3D(dims, rng.normal(0, 1, dims.shape).astype(np.float32)))
            if scored:
                p.score = float(rng.uniform(0, 1))
            out.append(p)
        return out

    for label, preds in (("masks-scored", masks(True)), ("masks-plain", masks(False)),
                         ("masks-empty", [])):
        first = tmp_path / f"{label}.vpms"
        second = tmp_path / f"{label}_again.vpms"
        save_mask_set(first, preds, dims=dims, num_classes=8)
        loaded, ldims = load_mask_set(first)
        save_mask_set(second, loaded, dims=ldims, num_classes=8)
        if first.read_bytes() != second.read_bytes():
            problems.append(f"{label}: bytes differ")

    small = DecoderConfig(num_queries=4, num_heads=2, num_layers=2, embed_dim=12,
                          pos_dim=12, voxel_dims=GridDims(4, 4, 2, 0.8), seed=3)
    w = DecoderWeights.random(small, 5)
    first = tmp_path / "weights.npz"
    second = tmp_path / "weights_again.npz"
    save_decoder_weights(first, w)
    save_decoder_weights(second, load_decoder_weights(first))
    if first.read_bytes() != second.read_bytes():
        problems.append("weights: bytes differ")

    ok = not problems
    assert _report("io-round-trips", ok,
                   "grids, mask sets, decoder weights byte-identical"), problems
