import itertools
import json
import math
import random
from fractions import Fraction

import pytest

from lace.raster import RasterImage, digest_hex, pixel_digest
from lace.service import ServiceConfig
from lace.session import WorkflowKind
from lace.study import (
    AdviseExact,
    LikertTable,
    NoVariation,
    ReplayScript,
    analyze,
    bundled_scripts,
    effect_size_r,
    friedman,
    kendalls_w,
    p_from_z,
    run_script,
    wilcoxon_signed_rank,
)
from lace.study.cli import main as study_main
from lace.study.replay import ScriptAction
from lace.study.stats import chi2_sf, midranks, normal_cdf, parse_likert_csv


# -- independent oracles -------------------------------------------------------


def friedman_oracle(rows):
    """Tie-aware Friedman statistic via the rank-sum formulation, exact."""
    n, k = len(rows), len(rows[0])
    ranks = [midranks(r) for r in rows]
    col = [sum(ranks[i][j] for i in range(n)) for j in range(k)]
    num = (k - 1) * (sum(r * r for r in col) - Fraction(n * n * k * (k + 1) ** 2, 4))
    den = sum(sum(r * r for r in row) for row in ranks) - Fraction(n * k * (k + 1) ** 2, 4)
    if den == 0:
        return Fraction(0)
    return num / den


def signed_rank_exact_midp(diffs):
    """Mid-percentile of the observed W+ under all 2^m sign assignments."""
    magnitudes = [abs(d) for d in diffs]
    ranks = [float(r) for r in midranks(magnitudes)]
    observed = sum(r for d, r in zip(diffs, ranks) if d > 0)
    below = equal = 0
    m = len(diffs)
    for signs in itertools.product((0, 1), repeat=m):
        w = sum(r for s, r in zip(signs, ranks) if s)
        if w < observed - 1e-9:
            below += 1
        elif abs(w - observed) <= 1e-9:
            equal += 1
    total = 2**m
    return (below + 0.5 * equal) / total


def normal_cdf_quadrature(z, step=1e-4):
    """Composite-Simpson integration of the standard normal density."""
    a, b = 0.0, abs(z)
    steps = max(2, int(math.ceil((b - a) / step / 2)) * 2)
    h = (b - a) / steps
    density = lambda t: math.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi)
    total = density(a) + density(b)
    for i in range(1, steps):
        total += density(a + i * h) * (4 if i % 2 else 2)
    integral = total * h / 3.0
    return 0.5 - integral if z < 0 else 0.5 + integral


# -- Friedman / Kendall ---------------------------------------------------------


class TestFriedman:
    def test_identical_columns_degenerate(self):
        rows = [[4, 4, 4]] * 5
        result = friedman(rows)
        assert result.chi2 == 0.0
        assert result.p == 1.0

    def test_perfectly_concordant_three_by_three(self):
        rows = [[1, 2, 3], [2, 4, 6], [1, 5, 7]]
        result = friedman(rows)
        assert result.chi2 == pytest.approx(6.0, abs=1e-12)
        assert result.df == 2
        assert result.p == pytest.approx(math.exp(-3.0), abs=1e-12)
        assert round(result.p, 4) == 0.0498

    def test_small_table_matches_exhaustive_rank_oracle(self):
        rows = [[3, 1, 2], [2, 2, 5], [1, 1, 1], [6, 3, 4]]
        assert friedman(rows).chi2 == float(friedman_oracle(rows))

    def test_validation(self):
        with pytest.raises(ValueError):
            friedman([[1, 2, 3]])
        with pytest.raises(ValueError):
            friedman([[1], [2]])
        with pytest.raises(ValueError):
            friedman([[1, 2], [3, None]])


class TestKendallsW:
    def test_perfect_agreement_is_one(self):
        rows = [[1, 3, 7], [2, 4, 6], [1, 2, 5]]
        assert kendalls_w(rows) == pytest.approx(1.0, abs=1e-12)

    def test_identical_columns_is_zero(self):
        assert kendalls_w([[2, 2, 2]] * 4) == 0.0

    def test_equals_chi2_over_n_k_minus_one(self):
        rng = random.Random(5)
        rows = [[rng.randint(1, 7) for _ in range(3)] for _ in range(5)]
        expected = friedman(rows).chi2 / (5 * 2)
        assert kendalls_w(rows) == pytest.approx(expected, abs=1e-15)

    def test_always_in_unit_interval(self):
        rng = random.Random(6)
        for _ in range(200):
            n = rng.randint(2, 8)
            rows = [[rng.randint(1, 7) for _ in range(3)] for _ in range(n)]
            w = kendalls_w(rows)
            assert 0.0 <= w <= 1.0


class TestWilcoxon:
    def test_no_variation(self):
        with pytest.raises(NoVariation):
            wilcoxon_signed_rank([3, 3, 3, 3, 3], [3, 3, 3, 3, 3])

    def test_too_few_pairs_advises_exact(self):
        with pytest.raises(AdviseExact):
            wilcoxon_signed_rank([1, 2, 3, 4], [2, 3, 4, 5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank([1, 2, 3], [1, 2])

    def test_antisymmetry(self):
        a = [5, 6, 4, 7, 3, 6, 5, 2]
        b = [3, 4, 4, 5, 2, 7, 4, 1]
        fwd = wilcoxon_signed_rank(a, b)
        rev = wilcoxon_signed_rank(b, a)
        assert fwd.z == pytest.approx(-rev.z, abs=1e-12)
        assert effect_size_r(fwd.z, fwd.n_effective) == pytest.approx(
            effect_size_r(rev.z, rev.n_effective), abs=1e-12
        )

    def test_eight_pair_vector_against_exact_enumeration(self):
        a = [5, 6, 4, 7, 3, 6, 5, 2]
        b = [3, 4, 4, 5, 2, 7, 4, 1]
        diffs = [x - y for x, y in zip(a, b) if x != y]
        result = wilcoxon_signed_rank(a, b, alternative="less")
        approx_percentile = normal_cdf(result.z)
        exact = signed_rank_exact_midp(diffs)
        assert abs(approx_percentile - exact) < 0.05

    def test_two_sided_doubles_the_tail(self):
        a = [5, 6, 4, 7, 3, 6, 5, 2]
        b = [3, 4, 4, 5, 2, 7, 4, 1]
        one = wilcoxon_signed_rank(a, b, alternative="greater")
        two = wilcoxon_signed_rank(a, b, alternative="two-sided")
        assert two.p_one_sided == pytest.approx(2 * one.p_one_sided, abs=1e-12)


class TestEffectSizeAndTails:
    def test_reported_effect_sizes(self):
        assert effect_size_r(-2.94, 21) == pytest.approx(0.6416, abs=5e-4)
        assert round(effect_size_r(-2.94, 21), 2) == 0.64
        assert round(effect_size_r(-3.33, 21), 2) == 0.73
        assert effect_size_r(0.0, 10) == 0.0

    def test_n_validated(self):
        with pytest.raises(ValueError):
            effect_size_r(1.0, 0)

    def test_p_from_z_examples(self):
        assert p_from_z(0.0) == 0.5
        assert p_from_z(-2.94) == pytest.approx(0.0016, abs=5e-5)
        assert p_from_z(-2.37) == pytest.approx(0.0089, abs=5e-5)

    def test_normal_cdf_against_quadrature_oracle(self):
        z = -5.0
        while z <= 5.0:
            assert abs(normal_cdf(z) - normal_cdf_quadrature(z)) < 1e-6
            z += 0.25

    def test_chi2_sf_closed_form_df2(self):
        for x in [0.5, 1.0, 3.7, 9.2]:
            assert chi2_sf(x, 2) == pytest.approx(math.exp(-x / 2), rel=1e-12)

    def test_tails_against_scipy(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        for z in [-4.2, -1.1, 0.3, 2.9]:
            assert normal_cdf(z) == pytest.approx(scipy_stats.norm.cdf(z), abs=1e-12)
        for df in [1, 2, 5]:
            for x in [0.2, 2.2, 11.0]:
                assert chi2_sf(x, df) == pytest.approx(scipy_stats.chi2.sf(x, df), rel=1e-10)


class TestMonotoneInvariance:
    def test_friedman_invariant_under_monotone_transforms(self):
        # Within-row ranks see only the ordering, so any strictly increasing
        # map leaves the statistic untouched.
        rng = random.Random(11)
        transforms = [
            lambda x: 2 * x + 1,
            lambda x: x**3,
            lambda x: math.exp(x / 2),
        ]
        for _ in range(20):
            rows = [[rng.randint(1, 7) for _ in range(3)] for _ in range(6)]
            base = friedman(rows).chi2
            for t in transforms:
                mapped = [[t(c) for c in row] for row in rows]
                assert friedman(mapped).chi2 == pytest.approx(base, abs=1e-9)

    def test_wilcoxon_invariant_under_positive_affine_transforms(self):
        # Signed ranks depend on difference signs and |d| order; positive
        # affine maps preserve both. (Nonlinear monotone maps can reorder
        # absolute differences and legitimately move z.)
        rng = random.Random(12)
        for _ in range(20):
            a = [rng.randint(1, 7) for _ in range(8)]
            b = [rng.randint(1, 7) for _ in range(8)]
            try:
                base = wilcoxon_signed_rank(a, b)
            except (NoVariation, AdviseExact):
                continue
            for scale, shift in [(2.0, 1.0), (0.5, -3.0), (10.0, 100.0)]:
                ta = [scale * x + shift for x in a]
                tb = [scale * x + shift for x in b]
                got = wilcoxon_signed_rank(ta, tb)
                assert got.z == pytest.approx(base.z, abs=1e-9)
                assert got.n_effective == base.n_effective


class TestLikertPlumbing:
    CSV = (
        "participant,workflow,measure,score\n"
        "p1,W1,ownership,3\np1,W2,ownership,4\np1,W3,ownership,6\n"
        "p2,W1,ownership,2\np2,W2,ownership,4\np2,W3,ownership,5\n"
        "p3,W1,ownership,4\np3,W2,ownership,4\np3,W3,ownership,7\n"
        "p4,W1,ownership,3\np4,W2,ownership,2\np4,W3,ownership,6\n"
        "p5,W1,ownership,1\np5,W2,ownership,3\np5,W3,ownership,5\n"
        "p6,W1,ownership,2\np6,W2,ownership,5\np6,W3,ownership,6\n"
        "p1,W1,art,4\np1,W2,art,3\np1,W3,art,6\n"
        "p2,W1,art,5\np2,W2,art,2\n"  # p2 has no W3 rating: listwise-dropped
        "p3,W1,art,3\np3,W2,art,3\np3,W3,art,5\n"
        "p4,W1,art,2\np4,W2,art,4\np4,W3,art,6\n"
        "p5,W1,art,4\np5,W2,art,1\np5,W3,art,7\n"
        "p6,W1,art,3\np6,W2,art,2\np6,W3,art,5\n"
        "p7,W1,art,2\np7,W2,art,3\np7,W3,art,6\n"
    )

    def test_parse_and_listwise_deletion(self):
        tables = parse_likert_csv(self.CSV)
        assert sorted(tables) == ["art", "ownership"]
        art = tables["art"]
        assert art.workflows == ["W1", "W2", "W3"]
        assert len(art.cells) == 7
        assert len(art.complete_rows()) == 6

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError):
            parse_likert_csv("a,b\n1,2\n")

    def test_bad_score_rejected(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_likert_csv("participant,workflow,measure,score\np1,W1,art,high\n")

    def test_score_range_validated(self):
        with pytest.raises(ValueError):
            LikertTable("m", ["W1", "W2"], ["p1"], [[0, 3]])

    def test_analyze_report_shape(self):
        tables = parse_likert_csv(self.CSV)
        report = analyze([tables["ownership"], tables["art"]])
        assert [m.measure for m in report.measures] == ["ownership", "art"]
        ownership = report.measures[0]
        assert ownership.n_used == 6
        assert ownership.friedman_p < 0.05
        assert [(p.a, p.b) for p in ownership.pairs] == [
            ("W1", "W2"),
            ("W1", "W3"),
            ("W2", "W3"),
        ]
        w1_w3 = ownership.pairs[1]
        assert w1_w3.z < 0  # W1 scores sit below W3
        assert w1_w3.p_one_sided < 0.05
        assert w1_w3.r == pytest.approx(abs(w1_w3.z) / math.sqrt(w1_w3.n_effective))
        data = json.loads(report.to_json())
        assert data["measures"][0]["friedman"]["df"] == 2
        assert "pair" in report.to_csv().splitlines()[0]

    def test_analyze_records_degenerate_pairs(self):
        table = LikertTable(
            "flat",
            ["W1", "W2"],
            ["p1", "p2", "p3"],
            [[4, 4], [5, 5], [3, 3]],
        )
        report = analyze([table])
        assert report.measures[0].pairs[0].error is not None


# -- replay ---------------------------------------------------------------------


def make_script(name="probe", workflow="W3", actions=(), **kwargs):
    defaults = dict(width=32, height=32, seed=7, cadence_ms=2000)
    defaults.update(kwargs)
    return ReplayScript(
        name=name,
        workflow=WorkflowKind(workflow),
        actions=list(actions),
        **defaults,
    )


class TestReplayScripts:
    def test_empty_script_outcome_is_background(self):
        outcome = run_script(make_script(actions=[]))
        white = RasterImage.filled(32, 32, (255, 255, 255, 255))
        assert outcome.final_digest == digest_hex(pixel_digest(white))
        assert outcome.cache_size == 0
        assert outcome.import_count == 0
        assert outcome.duration_ms == 0

    def test_single_cycle_provenance_depth_three(self):
        actions = [
            ScriptAction(0, "set_prompt", {"text": "cycle"}),
            ScriptAction(0, "generate", {}),
            ScriptAction(1000, "import", {"candidate_id": 1}),
        ]
        outcome = run_script(make_script(actions=actions))
        assert outcome.provenance_depth == 3

    def test_deterministic_across_runs(self):
        script = bundled_scripts()["t1-w3"]
        first = run_script(script)
        second = run_script(script)
        assert first == second

    def test_w1_script_rejects_weight_actions(self):
        with pytest.raises(ValueError, match="invalid for W1"):
            make_script(
                workflow="W1", actions=[ScriptAction(0, "set_weight", {"w": 0.5})]
            ).validate()

    def test_backwards_timestamps_rejected(self):
        with pytest.raises(ValueError, match="backwards"):
            make_script(
                actions=[ScriptAction(5, "generate", {}), ScriptAction(1, "generate", {})]
            ).validate()

    def test_bundled_scripts_cover_tasks_and_workflows(self):
        scripts = bundled_scripts()
        assert len(scripts) == 9
        names = {f"t{t}-w{w}" for t in (1, 2, 3) for w in (1, 2, 3)}
        assert set(scripts) == names
        gallery = scripts["t1-w1"]
        assert gallery.workflow is WorkflowKind.W1
        outcome = run_script(gallery)
        assert outcome.cache_size == 3
        assert outcome.mode_histogram["parallel"] == 0

    def test_json_roundtrip(self):
        script = bundled_scripts()["t2-w3"]
        clone = ReplayScript.from_json(script.to_json())
        assert run_script(clone) == run_script(script)

    def test_http_replay_matches_embedded(self, server_factory):
        base = server_factory(ServiceConfig(canvas=(96, 96), cadence_ms=2000))
        script = bundled_scripts()["t3-w3"]
        embedded = run_script(script)
        over_http = run_script(script, server_url=base)
        assert over_http == embedded


class TestCli:
    def test_run_bundled_script(self, capsys, tmp_path):
        out = tmp_path / "outcome.json"
        study_main(["run", "t1-w1", "--out", str(out)])
        printed = json.loads(capsys.readouterr().out)
        assert printed["cache_size"] == 3
        assert json.loads(out.read_text()) == printed

    def test_stats_from_csv(self, capsys, tmp_path):
        csv_path = tmp_path / "ratings.csv"
        csv_path.write_text(TestLikertPlumbing.CSV)
        report_path = tmp_path / "report.json"
        study_main(["stats", str(csv_path), "--measure", "ownership", "--out", str(report_path)])
        data = json.loads(report_path.read_text())
        assert data["measures"][0]["measure"] == "ownership"
        assert data["alternative"] == "less"

    def test_scripts_listing(self, capsys):
        study_main(["scripts"])
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 9
