"""Grid enumeration, checkpointed search, selection, and heatmap export."""

import functools
import json
import math

import numpy as np
import pytest

from hemodesign.design_search import (
    DesignGrid,
    UtilityReport,
    export_heatmaps,
    fold_changes,
    grid_search,
    reference_grid,
    row_from_dict,
    row_to_dict,
    select_optimal,
)
from hemodesign.model import Design
from hemodesign.priors import ScalarPrior, prior_profile
from hemodesign.sampler import PosteriorSamples
from hemodesign.utility import DesignUtility, UtilityEstimate, expected_utility

_LOG_2PI = math.log(2.0 * math.pi)


class TestReferenceGrid:
    def test_has_seventy_designs(self):
        designs = reference_grid().designs()
        assert len(designs) == 70
        assert len(set(designs)) == 70

    def test_every_design_starts_at_day_zero_within_horizon(self):
        for d in reference_grid().designs():
            assert d.days[0] == 0.0
            assert d.days[-1] <= 6.0
            assert len(set(d.replicates)) == 1
            assert d.replicates[0] in (3, 4, 5, 6, 7)

    def test_largest_design_is_seven_days_of_seven(self):
        designs = reference_grid().designs()
        assert max(d.n_mice for d in designs) == 49
        assert Design(days=(0, 1, 2, 3, 4, 5, 6), replicates=(7,) * 7) in designs

    def test_budget_six_leaves_one_design(self):
        designs = reference_grid(max_mice=6).designs()
        assert designs == (Design(days=(0.0, 6.0), replicates=(3, 3)),)

    def test_grid_validation(self):
        with pytest.raises(ValueError, match="start at day 0"):
            DesignGrid(time_sets=((1.0, 6.0),), replicate_options=(3,))
        with pytest.raises(ValueError, match="exceeds day 6"):
            DesignGrid(time_sets=((0.0, 7.0),), replicate_options=(3,))
        with pytest.raises(ValueError, match="positive"):
            DesignGrid(time_sets=((0.0, 6.0),), replicate_options=(0,))
        with pytest.raises(ValueError, match="increasing"):
            DesignGrid(time_sets=((0.0, 2.0, 1.0),), replicate_options=(3,))
        with pytest.raises(ValueError, match="at least one"):
            DesignGrid(time_sets=(), replicate_options=(3,))


def toy_row(design, joint, per_param=None, n_requested=4, n_excluded=0):
    per_param = dict(per_param or {"p0": joint / 2.0})
    est = UtilityEstimate(
        joint=joint,
        per_param=per_param,
        log_evidence=-1.0,
        evidence_error=0.01,
        n_draws=800,
        bandwidths={k: 0.1 for k in per_param},
    )
    retained = n_requested - n_excluded
    return DesignUtility(
        design=design,
        n_requested=n_requested,
        n_excluded=n_excluded,
        exclusions=("synthetic failure",) * n_excluded,
        estimates=(est,) * retained,
        joint_mean=joint if retained else float("nan"),
        joint_se=0.05 if retained >= 2 else float("nan"),
        per_param_mean=per_param if retained else {},
        per_param_se={k: 0.05 for k in per_param} if retained else {},
    )


def formula_report(grid, value_fn):
    rows = tuple(toy_row(d, value_fn(d)) for d in grid.designs())
    return UtilityReport(rows=rows, n_datasets=4, seed=0)


class _CountingEvaluator:
    """Deterministic stand-in for expected_utility that counts invocations."""

    def __init__(self):
        self.calls = 0

    def __call__(self, design, priors, n_datasets, settings, *, seed=0, workers=1):
        self.calls += 1
        rng = np.random.default_rng(seed)
        return toy_row(design, design.n_mice + 0.1 * rng.random(), n_requested=n_datasets)


class _DatasetConjugateFitter:
    """Fit stand-in: every observation is a unit-noise reading of one mean.

    More mice means more observations of the same quantity, so expected
    information gain must grow along nested designs; that gives the search
    a model-free monotonicity oracle.
    """

    class _Model:
        global_names = ["mu_hsc"]

        def __init__(self, y):
            self.y = y
            self.priors = {"mu_hsc": ScalarPrior(m=0.0, s=1.0)}

        def log_likelihood_many(self, V):
            V = np.atleast_2d(np.asarray(V, dtype=float))
            r = self.y[None, :] - V[:, :1]
            return -0.5 * self.y.size * _LOG_2PI - 0.5 * np.sum(r * r, axis=1)

        def log_prior_many(self, V):
            V = np.atleast_2d(np.asarray(V, dtype=float))
            return -0.5 * (_LOG_2PI + V[:, 0] ** 2)

        def log_posterior(self, v):
            V = np.atleast_2d(np.asarray(v, dtype=float))
            return float(self.log_likelihood_many(V)[0] + self.log_prior_many(V)[0])

    def __call__(self, dataset, priors, settings, seed=0):
        y = np.array([v for r in dataset.records for v in (r.y_hsc, r.y_mpp)])
        model = self._Model(y)
        n = y.size
        post_mean = y.sum() / (n + 1.0)
        post_sd = 1.0 / math.sqrt(n + 1.0)
        rng = np.random.default_rng(seed)
        draws = post_mean + post_sd * rng.standard_normal((2, 400, 1))
        flat = draws.reshape(-1, 1)
        lp = (model.log_likelihood_many(flat) + model.log_prior_many(flat)).reshape(2, 400)

        class _Fit:
            pass

        fit = _Fit()
        fit.model = model
        fit.flagged = ()
        fit.samples = PosteriorSamples(
            draws=draws,
            log_posts=lp,
            divergent=np.zeros((2, 400), dtype=bool),
            accept_stat=np.ones((2, 400)),
            step_size=np.full(2, 0.5),
            param_names=("mu_hsc",),
        )
        return fit


class TestGridSearch:
    def test_single_design_report(self):
        grid = DesignGrid(time_sets=((0.0, 6.0),), replicate_options=(3,))
        report = grid_search(
            grid, prior_profile("synthetic"), 4, evaluate=_CountingEvaluator()
        )
        assert len(report.rows) == 1
        assert fold_changes(report) == [1.0]

    def test_more_observations_never_worth_less(self):
        grid = DesignGrid(time_sets=((0.0, 2.0),), replicate_options=(1, 2, 4, 8))
        evaluate = functools.partial(expected_utility, fit_fn=_DatasetConjugateFitter())
        report = grid_search(grid, prior_profile("synthetic"), 6, seed=3, evaluate=evaluate)
        rows = report.rows
        for small, big in zip(rows, rows[1:]):
            margin = 2.0 * math.hypot(small.joint_se, big.joint_se)
            assert big.joint_mean > small.joint_mean - margin

    def test_checkpoints_resume_without_recomputation(self, tmp_path):
        grid = DesignGrid(time_sets=((0.0, 6.0), (0.0, 3.0, 6.0)), replicate_options=(3, 4))
        priors = prior_profile("synthetic")
        ev = _CountingEvaluator()
        first = grid_search(grid, priors, 4, seed=5, checkpoint_dir=tmp_path, evaluate=ev)
        assert ev.calls == 4
        second = grid_search(grid, priors, 4, seed=5, checkpoint_dir=tmp_path, evaluate=ev)
        assert ev.calls == 4  # everything loaded from disk
        assert [row_to_dict(r) for r in second.rows] == [row_to_dict(r) for r in first.rows]

    def test_partial_checkpoints_fill_in_the_gap(self, tmp_path):
        grid = DesignGrid(time_sets=((0.0, 6.0), (0.0, 3.0, 6.0)), replicate_options=(3,))
        priors = prior_profile("synthetic")
        ev = _CountingEvaluator()
        full = grid_search(grid, priors, 4, seed=6, checkpoint_dir=tmp_path, evaluate=ev)
        files = sorted(tmp_path.glob("design-*.json"))
        assert len(files) == 2
        files[0].unlink()
        resumed = grid_search(grid, priors, 4, seed=6, checkpoint_dir=tmp_path, evaluate=ev)
        assert ev.calls == 3  # one design recomputed, one loaded
        assert [row_to_dict(r) for r in resumed.rows] == [row_to_dict(r) for r in full.rows]

    def test_checkpoints_keyed_by_inputs(self, tmp_path):
        grid = DesignGrid(time_sets=((0.0, 6.0),), replicate_options=(3,))
        priors = prior_profile("synthetic")
        ev = _CountingEvaluator()
        grid_search(grid, priors, 4, seed=7, checkpoint_dir=tmp_path, evaluate=ev)
        grid_search(grid, priors, 4, seed=8, checkpoint_dir=tmp_path, evaluate=ev)
        grid_search(grid, priors, 5, seed=7, checkpoint_dir=tmp_path, evaluate=ev)
        assert ev.calls == 3
        assert len(list(tmp_path.glob("design-*.json"))) == 3

    def test_unusable_design_retained_with_flag(self):
        grid = DesignGrid(time_sets=((0.0, 6.0),), replicate_options=(3, 4))

        def evaluate(design, priors, n_datasets, settings, *, seed=0, workers=1):
            failed = n_datasets if design.n_mice == 8 else 0
            return toy_row(design, float(design.n_mice), n_requested=n_datasets, n_excluded=failed)

        report = grid_search(grid, prior_profile("synthetic"), 4, evaluate=evaluate)
        assert [row.unusable for row in report.rows] == [False, True]
        assert math.isnan(fold_changes(report)[1])
        assert select_optimal(report) == report.rows[0].design

    def test_empty_grid_rejected(self):
        grid = DesignGrid(time_sets=((0.0, 6.0),), replicate_options=(5,), max_mice=3)
        with pytest.raises(ValueError, match="empty"):
            grid_search(grid, prior_profile("synthetic"), 4, evaluate=_CountingEvaluator())

    def test_row_serialization_round_trip(self):
        row = toy_row(Design(days=(0.0, 2.0, 6.0), replicates=(3, 3, 3)), 1.7, n_excluded=1)
        clone = row_from_dict(json.loads(json.dumps(row_to_dict(row))))
        assert row_to_dict(clone) == row_to_dict(row)
        assert clone.design == row.design


class TestSelection:
    def test_budget_singleton_on_reference_grid(self):
        report = formula_report(reference_grid(), lambda d: float(d.n_mice))
        assert select_optimal(report, budget=6) == Design(days=(0.0, 6.0), replicates=(3, 3))

    def test_argmax_and_tie_breaking(self):
        d_big = Design(days=(0.0, 1.0, 6.0), replicates=(4, 4, 4))
        d_small = Design(days=(0.0, 6.0), replicates=(3, 3))
        d_flat = Design(days=(0.0, 1.0, 2.0), replicates=(2, 2, 2))
        report = UtilityReport(
            rows=(toy_row(d_big, 2.0), toy_row(d_small, 2.0), toy_row(d_flat, 1.0)),
            n_datasets=4,
            seed=0,
        )
        # tie on utility: fewer mice wins
        assert select_optimal(report) == d_small
        report2 = UtilityReport(
            rows=(toy_row(d_flat, 2.0), toy_row(d_small, 2.0)), n_datasets=4, seed=0
        )
        # tie on utility and mice: fewer observation days wins
        assert select_optimal(report2) == d_small

    def test_selection_invariant_under_monotone_rescale(self):
        grid = reference_grid()
        base = formula_report(grid, lambda d: 0.1 * d.n_mice + 0.01 * len(d.days))
        scaled = formula_report(grid, lambda d: math.exp(0.1 * d.n_mice + 0.01 * len(d.days)))
        assert select_optimal(base) == select_optimal(scaled)
        assert select_optimal(base, budget=20) == select_optimal(scaled, budget=20)

    def test_parameter_objective_uses_marginal_column(self):
        d_a = Design(days=(0.0, 6.0), replicates=(3, 3))
        d_b = Design(days=(0.0, 3.0), replicates=(3, 3))
        report = UtilityReport(
            rows=(
                toy_row(d_a, 2.0, per_param={"p0": 0.1, "gamma1": 0.9}),
                toy_row(d_b, 1.0, per_param={"p0": 0.8, "gamma1": 0.2}),
            ),
            n_datasets=4,
            seed=0,
        )
        assert select_optimal(report, objective="joint") == d_a
        assert select_optimal(report, objective="p0") == d_b
        assert select_optimal(report, objective="gamma1") == d_a

    def test_unknown_objective_rejected(self):
        report = formula_report(
            DesignGrid(time_sets=((0.0, 6.0),), replicate_options=(3,)), lambda d: 1.0
        )
        with pytest.raises(ValueError, match="unknown objective"):
            select_optimal(report, objective="banana")

    def test_no_feasible_design_rejected(self):
        report = formula_report(reference_grid(), lambda d: float(d.n_mice))
        with pytest.raises(ValueError, match="budget"):
            select_optimal(report, budget=5)

    def test_fold_changes_anchor_at_one(self):
        report = formula_report(reference_grid(), lambda d: float(d.n_mice))
        folds = fold_changes(report)
        assert min(folds) == 1.0
        assert all(f >= 1.0 for f in folds)

    def test_fold_changes_refuse_nonpositive_minimum(self):
        grid = DesignGrid(time_sets=((0.0, 6.0),), replicate_options=(3, 4))
        report = formula_report(grid, lambda d: d.n_mice - 7.0)  # one negative value
        assert all(math.isnan(f) for f in fold_changes(report))


class TestHeatmaps:
    def test_export_layout_and_values(self, tmp_path):
        import csv

        grid = DesignGrid(time_sets=((0.0, 6.0), (0.0, 3.0, 6.0)), replicate_options=(3, 4))
        report = formula_report(grid, lambda d: float(d.n_mice))
        paths = export_heatmaps(report, tmp_path)
        assert set(paths) == {"joint", "p0"}
        with open(paths["joint"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["time_set", "3", "4"]
        assert [r[0] for r in rows[1:]] == ["{0,6}", "{0,3,6}"]
        folds = fold_changes(report)
        assert float(rows[1][1]) == pytest.approx(folds[0])
        assert float(rows[2][2]) == pytest.approx(folds[3])

    def test_missing_cells_left_empty(self, tmp_path):
        d_a = Design(days=(0.0, 6.0), replicates=(3, 3))
        d_b = Design(days=(0.0, 3.0, 6.0), replicates=(4, 4, 4))
        report = UtilityReport(
            rows=(toy_row(d_a, 1.0), toy_row(d_b, 2.0)), n_datasets=4, seed=0
        )
        paths = export_heatmaps(report, tmp_path, objectives=("joint",))
        import csv

        with open(paths["joint"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[1] == ["{0,6}", "1", ""]
        assert rows[2] == ["{0,3,6}", "", "2"]
