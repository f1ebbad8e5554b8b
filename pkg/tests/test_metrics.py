import numpy as np
import pytest

from evsim.metrics import (
    DetectionEvalConfig,
    DetectionMetrics,
    DetectionSet,
    box_iou,
    mpjpe,
    nms,
    pckh50,
    read_detections_file,
    read_gt_boxes_file,
    read_pose_file,
    split_into_chunks,
    voc_detection_eval,
)
from evsim.volumes import EventStream


class TestMpjpe:
    def test_exact(self):
        joints = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert mpjpe(joints, joints) == 0.0

    def test_three_four_five(self):
        assert mpjpe(np.array([[3.0, 4.0]]), np.array([[0.0, 0.0]])) == 5.0

    def test_matches_per_joint_norm_oracle(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(0, 100, size=(17, 2))
        gt = rng.uniform(0, 100, size=(17, 2))
        expected = np.mean([np.hypot(*(p - g)) for p, g in zip(pred, gt)])
        assert mpjpe(pred, gt) == pytest.approx(expected, rel=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0, 10, size=(5, 2))
        gt = rng.uniform(0, 10, size=(5, 2))
        shift = np.array([13.0, -7.0])
        assert mpjpe(pred + shift, gt + shift) == pytest.approx(mpjpe(pred, gt), rel=1e-12)


def _pose_fixture():
    # head size = 0.6 * |(0,0) - (0,10)| = 6 -> threshold 3
    gt = np.array([[0.0, 0.0], [-5.0, 10.0], [5.0, 10.0], [8.0, 8.0]])
    return gt


class TestPckh:
    def test_exact_pose(self):
        gt = _pose_fixture()
        assert pckh50(gt, gt, 0, (1, 2)) == 100.0

    def test_errors_exactly_at_threshold_fail(self):
        gt = _pose_fixture()
        pred = gt + np.array([3.0, 0.0])
        assert pckh50(pred, gt, 0, (1, 2)) == 0.0

    def test_two_of_four_inside(self):
        gt = _pose_fixture()
        pred = gt.copy()
        pred[1] += (10.0, 0.0)    # error 10, outside
        pred[2] += (1.0, 1.0)     # error sqrt(2), inside
        pred[3] += (0.0, 5.0)     # error 5, outside
        assert pckh50(pred, gt, 0, (1, 2)) == 50.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        gt = _pose_fixture() + rng.uniform(-1, 1, size=(4, 2))
        pred = gt + rng.uniform(-2, 2, size=(4, 2))
        base = pckh50(pred, gt, 0, (1, 2))
        s = 3.7
        assert pckh50(pred * s, gt * s, 0, (1, 2)) == base


# ---------------------------------------------------------------------------
# independent brute-force oracle: scalar arithmetic and explicit loops only

def _iou_scalar(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)
    return inter / union if union > 0 else 0.0


def oracle_eval(pred_boxes, scores, gt_boxes, labels, cfg):
    dets = [(list(b), s) for b, s in zip(pred_boxes, scores) if s >= cfg.conf_thresh]
    dets.sort(key=lambda d: -d[1])
    kept = []
    for box, score in dets:
        if all(_iou_scalar(box, kb) <= cfg.nms_iou for kb, _ in kept):
            kept.append((box, score))
    taken = [False] * len(gt_boxes)
    outcomes = []
    for box, score in kept:
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gt_boxes):
            iou = _iou_scalar(box, list(gt))
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_iou >= cfg.match_iou and best_j >= 0:
            if labels[best_j] == "dont_care":
                outcomes.append(("ignore", None))
            elif not taken[best_j]:
                taken[best_j] = True
                outcomes.append(("tp", labels[best_j]))
            else:
                outcomes.append(("fp", None))
        else:
            outcomes.append(("fp", None))
    counted = [o for o in outcomes if o[0] != "ignore"]
    tp = sum(1 for o in counted if o[0] == "tp")
    fp = len(counted) - tp
    n_easy = labels.count("easy")
    n_hard = labels.count("hard")
    n_pos = n_easy + n_hard
    precision = tp / (tp + fp) if tp + fp else 0.0
    r_easy = sum(1 for o in counted if o[1] == "easy") / n_easy if n_easy else 0.0
    r_hard = sum(1 for o in counted if o[1] == "hard") / n_hard if n_hard else 0.0
    r_comb = tp / n_pos if n_pos else 0.0
    # all-point AP straight from the definition
    ap = 0.0
    if n_pos and counted:
        points, tp_c, fp_c = [], 0, 0
        for o in counted:
            tp_c += o[0] == "tp"
            fp_c += o[0] == "fp"
            points.append((tp_c / n_pos, tp_c / (tp_c + fp_c)))
        prev_r = 0.0
        for k, (r, _) in enumerate(points):
            if r > prev_r:
                best_p = max(p for rr, p in points if rr >= r)
                ap += (r - prev_r) * best_p
                prev_r = r
    f1 = 2 * precision * r_comb / (precision + r_comb) if precision + r_comb else 0.0
    return dict(precision=precision, recall_easy=r_easy, recall_hard=r_hard,
                recall_combined=r_comb, ap=ap, f1=f1)


def random_instance(rng, max_boxes=6):
    def boxes(n):
        out = []
        for _ in range(n):
            x1, y1 = rng.uniform(0, 60, size=2)
            w, h = rng.uniform(5, 40, size=2)
            out.append([x1, y1, x1 + w, y1 + h])
        return np.array(out).reshape(-1, 4)

    n_pred = int(rng.integers(0, max_boxes + 1))
    n_gt = int(rng.integers(0, max_boxes + 1))
    scores = rng.choice(np.linspace(0.05, 0.99, 60), size=n_pred, replace=False) \
        if n_pred else np.zeros(0)
    labels = [str(rng.choice(["easy", "hard", "dont_care"])) for _ in range(n_gt)]
    return boxes(n_pred), scores, boxes(n_gt), labels


class TestVocEval:
    def test_single_box_fixture(self):
        dset = DetectionSet(np.array([[0, 0, 10, 10.0]]), np.array([0.9]),
                            np.array([[0, 0, 10, 16.0]]), ["easy"])  # IoU 0.625
        m = voc_detection_eval(dset)
        assert m.precision == 1.0 and m.recall_easy == 1.0 and m.ap == 1.0
        assert m.f1 == 1.0

    def test_dont_care_only_overlap_ignored(self):
        dset = DetectionSet(np.array([[0, 0, 10, 10.0]]), np.array([0.9]),
                            np.array([[0, 0, 10, 10.0]]), ["dont_care"])
        m = voc_detection_eval(dset)
        assert not m.precision_defined and m.precision == 0.0
        assert not m.combined_defined and m.recall_combined == 0.0

    def test_dont_care_never_alters_precision(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            pred, scores, gt, labels = random_instance(rng)
            real = [l != "dont_care" for l in labels]
            base = voc_detection_eval(DetectionSet(pred, scores, gt[real],
                                                   [l for l in labels if l != "dont_care"]))
            # adding far-away don't-care regions changes nothing
            far = np.array([[1000, 1000, 1010, 1010.0]])
            with_dc = voc_detection_eval(DetectionSet(
                pred, scores, np.vstack([gt[real], far]),
                [l for l in labels if l != "dont_care"] + ["dont_care"]))
            assert with_dc.precision == base.precision
            assert with_dc.ap == base.ap

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(17)
        cfg = DetectionEvalConfig()
        for _ in range(200):
            pred, scores, gt, labels = random_instance(rng)
            got = voc_detection_eval(DetectionSet(pred, scores, gt, labels), cfg)
            want = oracle_eval(pred, scores, gt, labels, cfg)
            for key, value in want.items():
                assert getattr(got, key) == pytest.approx(value, abs=1e-12), key

    def test_ap_bounded_and_monotone_under_fp_removal(self):
        rng = np.random.default_rng(23)
        checked = 0
        for _ in range(200):
            pred, scores, gt, labels = random_instance(rng)
            if len(pred) < 2:
                continue
            m = voc_detection_eval(DetectionSet(pred, scores, gt, labels))
            assert 0.0 <= m.ap <= 1.0
            # drop the lowest-confidence detection if it was a false positive
            low = int(np.argmin(scores))
            keep = np.arange(len(pred)) != low
            m2 = voc_detection_eval(DetectionSet(pred[keep], scores[keep], gt, labels))
            if m2.recall_combined == m.recall_combined:  # removed box matched nothing
                assert m2.ap >= m.ap - 1e-12
                checked += 1
        assert checked > 20

    def test_malformed_boxes(self):
        with pytest.raises(ValueError, match="malformed"):
            DetectionSet(np.array([[10, 0, 0, 10.0]]), np.array([0.5]),
                         np.zeros((0, 4)), [])
        with pytest.raises(ValueError, match="confidences"):
            DetectionSet(np.array([[0, 0, 1, 1.0]]), np.array([1.5]),
                         np.zeros((0, 4)), [])
        with pytest.raises(ValueError, match="labels"):
            DetectionSet(np.zeros((0, 4)), np.zeros(0),
                         np.array([[0, 0, 1, 1.0]]), ["medium"])


class TestNms:
    def test_subset_and_pairwise_iou(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            pred, scores, _, _ = random_instance(rng, max_boxes=6)
            if not len(pred):
                continue
            keep = nms(pred, scores, 0.2)
            assert set(keep) <= set(range(len(pred)))
            kept = pred[keep]
            ious = box_iou(kept, kept)
            np.fill_diagonal(ious, 0.0)
            assert np.all(ious <= 0.2)

    def test_keeps_highest_confidence(self):
        boxes = np.array([[0, 0, 10, 10.0], [1, 1, 11, 11.0]])
        keep = nms(boxes, np.array([0.3, 0.8]), 0.2)
        assert list(keep) == [1]


class TestChunking:
    def test_fixed_count_chunks(self):
        n = 7500 * 2 + 137
        rng = np.random.default_rng(7)
        s = EventStream(rng.integers(0, 10, n), rng.integers(0, 10, n),
                        np.sort(rng.uniform(0, 1, n)), rng.choice([-1, 1], n), 10, 10)
        chunks = split_into_chunks(s)
        assert [len(c) for c in chunks] == [7500, 7500, 137]
        assert sum(len(c) for c in chunks) == n


class TestFileReaders:
    def test_pose_file(self, tmp_path):
        path = tmp_path / "pose.txt"
        path.write_text("# x y\n1.5 2.5\n3 4\n")
        np.testing.assert_array_equal(read_pose_file(path), [[1.5, 2.5], [3.0, 4.0]])

    def test_detection_files(self, tmp_path):
        det = tmp_path / "det.txt"
        det.write_text("0 0 10 10 0.9\n5 5 20 20 0.4\n")
        boxes, scores = read_detections_file(det)
        assert boxes.shape == (2, 4) and list(scores) == [0.9, 0.4]
        gt = tmp_path / "gt.txt"
        gt.write_text("0 0 10 10 easy\n5 5 20 20 dont_care\n")
        gboxes, labels = read_gt_boxes_file(gt)
        assert labels == ["easy", "dont_care"]

    def test_malformed_pose_line(self, tmp_path):
        path = tmp_path / "pose.txt"
        path.write_text("1 2 3\n")
        with pytest.raises(ValueError, match="expected"):
            read_pose_file(path)
