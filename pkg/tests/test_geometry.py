import math

import numpy as np
import pytest

from thermofuse.errors import DegenerateConfiguration, MalformedLine, SingularTransform
from thermofuse.geometry import (
    IDENTITY,
    AffineTransform,
    BBox,
    KeypointMatch,
    Point2,
    estimate_affine_lsq,
    iou,
    parse_matches,
    squared_residuals,
    warp_bbox,
)

from oracles import iou_cell_count, lsq_affine_oracle


def _match(sx, sy, dx, dy, conf=1.0):
    return KeypointMatch(Point2(sx, sy), Point2(dx, dy), conf)


class TestIou:
    def test_identical_boxes(self):
        b = BBox(0, 0, 10, 10)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0

    def test_partial_overlap_against_cell_counting_oracle(self):
        a = BBox(0, 0, 10, 10)
        b = BBox(5, 5, 15, 15)
        expected = iou_cell_count((0, 0, 10, 10), (5, 5, 15, 15))
        assert expected == pytest.approx(25 / 175)
        assert iou(a, b) == pytest.approx(expected, abs=1e-12)

    def test_random_boxes_properties(self):
        rng = np.random.RandomState(7)
        for _ in range(300):
            x0, y0 = rng.uniform(-50, 50, 2)
            a = BBox(x0, y0, x0 + rng.uniform(0.1, 30), y0 + rng.uniform(0.1, 30))
            x1, y1 = rng.uniform(-50, 50, 2)
            b = BBox(x1, y1, x1 + rng.uniform(0.1, 30), y1 + rng.uniform(0.1, 30))
            v = iou(a, b)
            assert 0.0 <= v <= 1.0
            assert v == pytest.approx(iou(b, a), abs=1e-15)
            assert iou(a, a) == 1.0

    def test_invalid_box_rejected(self):
        with pytest.raises(ValueError):
            BBox(5, 0, 5, 10)
        with pytest.raises(ValueError):
            BBox(0, 0, 10, float("nan"))


class TestAffineTransform:
    def test_identity_apply(self):
        p = IDENTITY.apply(Point2(3, 4))
        assert (p.x, p.y) == (3, 4)

    def test_scale_translate_apply(self):
        t = AffineTransform(2, 0, 0, 2, 3, 4)
        p = t.apply(Point2(1, 1))
        assert (p.x, p.y) == (5, 6)

    def test_invert_round_trip(self):
        t = AffineTransform(1.3, -0.4, 0.2, 0.9, 17.0, -6.5)
        inv = t.invert()
        rng = np.random.RandomState(3)
        for _ in range(50):
            p = Point2(*rng.uniform(-1e4, 1e4, 2))
            q = inv.apply(t.apply(p))
            assert abs(q.x - p.x) < 1e-9
            assert abs(q.y - p.y) < 1e-9

    def test_invert_identity_and_translation_and_scale(self):
        assert IDENTITY.invert() == IDENTITY
        inv = AffineTransform(1, 0, 0, 1, 5, -2).invert()
        assert inv == AffineTransform(1, 0, 0, 1, -5, 2)
        inv = AffineTransform(2, 0, 0, 2, 0, 0).invert()
        assert inv == AffineTransform(0.5, 0, 0, 0.5, 0, 0)

    def test_invert_singular(self):
        with pytest.raises(SingularTransform):
            AffineTransform(1, 2, 2, 4, 0, 0).invert()

    def test_compose(self):
        scale = AffineTransform(2, 0, 0, 2, 0, 0)
        shift = AffineTransform(1, 0, 0, 1, 3, 4)
        combined = scale.compose(shift)  # shift first, then scale
        p = combined.apply(Point2(1, 1))
        assert (p.x, p.y) == (8, 10)


class TestWarpBBox:
    def test_identity(self):
        b = BBox(2, 3, 7, 11)
        assert warp_bbox(IDENTITY, b) == b

    def test_scale_two(self):
        assert warp_bbox(AffineTransform(2, 0, 0, 2, 0, 0), BBox(0, 0, 1, 1)) == BBox(0, 0, 2, 2)

    def test_rotation_45_matches_corner_enumeration(self):
        c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
        rot = AffineTransform(c, -s, s, c, 0, 0)
        box = BBox(0, 0, 1, 1)
        # corner-enumeration oracle
        corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
        pts = [(c * x - s * y, s * x + c * y) for x, y in corners]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        got = warp_bbox(rot, box)
        assert got.xmin == pytest.approx(min(xs), abs=1e-9)
        assert got.xmax == pytest.approx(max(xs), abs=1e-9)
        assert got.ymin == pytest.approx(min(ys), abs=1e-9)
        assert got.ymax == pytest.approx(max(ys), abs=1e-9)
        # spec values: hull (-sqrt2/2, 0, sqrt2/2, sqrt2)
        assert got.xmin == pytest.approx(-math.sqrt(2) / 2, abs=1e-9)
        assert got.ymax == pytest.approx(math.sqrt(2), abs=1e-9)

    def test_commutes_with_translation(self):
        rng = np.random.RandomState(11)
        t = AffineTransform(1.2, 0.3, -0.1, 0.8, 4.0, -2.0)
        for _ in range(20):
            x0, y0 = rng.uniform(-10, 10, 2)
            box = BBox(x0, y0, x0 + 3, y0 + 2)
            dx, dy = rng.uniform(-5, 5, 2)
            shifted_then_warped = warp_bbox(t, box.shift(dx, dy))
            want = warp_bbox(t, box).shift(t.a * dx + t.b * dy, t.c * dx + t.d * dy)
            assert shifted_then_warped.xmin == pytest.approx(want.xmin, abs=1e-9)
            assert shifted_then_warped.ymax == pytest.approx(want.ymax, abs=1e-9)


class TestEstimateAffineLsq:
    def test_exact_three_point_solve(self):
        matches = [_match(0, 0, 3, 4), _match(1, 0, 5, 4), _match(0, 1, 3, 6)]
        t = estimate_affine_lsq(matches)
        assert np.allclose(t.params(), [2, 0, 0, 2, 3, 4], atol=1e-9)

    def test_identity_recovery(self):
        rng = np.random.RandomState(5)
        pts = rng.uniform(0, 100, size=(10, 2))
        matches = [_match(x, y, x, y) for x, y in pts]
        t = estimate_affine_lsq(matches)
        assert np.allclose(t.params(), IDENTITY.params(), atol=1e-9)

    def test_noiseless_recovery_of_random_affines(self):
        rng = np.random.RandomState(17)
        for _ in range(25):
            params = rng.uniform(-2, 2, 6)
            while abs(params[0] * params[3] - params[1] * params[2]) < 0.1:
                params = rng.uniform(-2, 2, 6)
            truth = AffineTransform(*params)
            pts = rng.uniform(-50, 50, size=(8, 2))
            matches = [
                _match(x, y, truth.apply(Point2(x, y)).x, truth.apply(Point2(x, y)).y)
                for x, y in pts
            ]
            t = estimate_affine_lsq(matches)
            assert np.allclose(t.params(), truth.params(), atol=1e-9)

    def test_noisy_fit_matches_normal_equations_oracle(self):
        rng = np.random.RandomState(23)
        truth = AffineTransform(1.1, 0.2, -0.15, 0.95, 40.0, -12.0)
        pts = rng.uniform(0, 500, size=(100, 2))
        noise = rng.normal(0, 0.5, size=(100, 2))
        rows = []
        matches = []
        for (x, y), (nx, ny) in zip(pts, noise):
            q = truth.apply(Point2(x, y))
            rows.append((x, y, q.x + nx, q.y + ny))
            matches.append(_match(x, y, q.x + nx, q.y + ny))
        t = estimate_affine_lsq(matches)
        oracle = lsq_affine_oracle(rows)
        assert np.allclose(t.params(), oracle, atol=1e-6)
        # noise floor: linear coefficients are tight, translations carry the
        # sigma/sqrt(n) uncertainty of the noisy targets
        assert np.allclose(t.params()[:4], truth.params()[:4], atol=1e-2)
        assert np.allclose(t.params()[4:], truth.params()[4:], atol=0.5)

    def test_residual_never_beaten_by_perturbations(self):
        rng = np.random.RandomState(31)
        pts = rng.uniform(0, 100, size=(30, 2))
        matches = [
            _match(x, y, 1.5 * x + 2 + rng.normal(0, 1), 0.9 * y - 1 + rng.normal(0, 1))
            for x, y in pts
        ]
        t = estimate_affine_lsq(matches)
        best = squared_residuals(t, matches).sum()
        for _ in range(100):
            delta = rng.normal(0, 0.01, 6)
            other = AffineTransform(*(np.array(t.params()) + delta))
            assert squared_residuals(other, matches).sum() >= best - 1e-9

    def test_collinear_degenerate(self):
        matches = [_match(i, 2 * i, i, 2 * i) for i in range(10)]
        with pytest.raises(DegenerateConfiguration):
            estimate_affine_lsq(matches)

    def test_too_few_matches(self):
        with pytest.raises(DegenerateConfiguration):
            estimate_affine_lsq([_match(0, 0, 1, 1), _match(1, 1, 2, 2)])


class TestMatchFile:
    def test_parse_basic_and_comments(self):
        text = """
        # header comment
        10.5 20.25 3.0 4.0
        1 2 3 4 0.75  # trailing comment
        """
        matches = parse_matches(text)
        assert len(matches) == 2
        assert matches[0].src == Point2(10.5, 20.25)
        assert matches[0].confidence == 1.0
        assert matches[1].confidence == 0.75

    def test_malformed_line_reports_number(self):
        with pytest.raises(MalformedLine) as err:
            parse_matches("1 2 3\n")
        assert err.value.line_no == 1

    def test_bad_confidence(self):
        with pytest.raises(MalformedLine):
            parse_matches("1 2 3 4 1.5\n")

    def test_non_numeric(self):
        with pytest.raises(MalformedLine):
            parse_matches("a b c d\n")
