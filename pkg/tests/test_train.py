"""Tests for splits, the Adam/MSE training loop, and synthetic targets."""

import numpy as np
import pytest

from molpool import tensor as T
from molpool import train as tr
from molpool.gnn import EdgeMode, GnnConfig
from molpool.molgraph import (Element, FeatureConfig, Hybridization,
                              molecular_weight, parse_smiles)
from molpool.pooling import PoolingKind


def weight_dataset(smiles_list, name="w"):
    entries = [(parse_smiles(s), molecular_weight(parse_smiles(s)))
               for s in smiles_list]
    return tr.Dataset(entries, name)


ALKANES_12 = ["C", "CC", "CCC", "CCCC", "CC(C)C", "CCCCC", "CC(C)CC",
              "CC(C)(C)C", "CCCCCC", "CC(C)CCC", "CCC(C)CC", "CC(C)(C)CC"]

SMALL_GNN = GnnConfig(hidden_dim=8, num_layers=2,
                      edge_mode=EdgeMode.SHARED_MATRIX, mlp_layers=(8, 4, 1))
SUM = PoolingKind.from_string("sum")
HCOUNT = FeatureConfig.h_count_only()


def quick_train(ds, epochs=30, seed=0, val=None, gnn=SMALL_GNN, batch_size=8):
    cfg = tr.TrainConfig(epochs=epochs, batch_size=batch_size, seed=seed)
    train_ds, val_ds, _ = (tr.split_random(ds, seed=seed)
                           if val is None else (ds, val, None))
    return tr.train_model(train_ds, val_ds, gnn, SUM, cfg,
                          feature_config=HCOUNT)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

class TestSplitRandom:
    def test_sizes_floor_rule(self):
        ds = weight_dataset(ALKANES_12)
        a, b, c = tr.split_random(ds, seed=1)
        assert (len(a), len(b), len(c)) == (9, 1, 2)  # floor(9.6), floor(1.2)

    def test_boundary_ten_entries(self):
        a, b, c = tr.split_random(weight_dataset(ALKANES_12[:10]), seed=0)
        assert (len(a), len(b), len(c)) == (8, 1, 1)

    def test_too_small_raises(self):
        with pytest.raises(tr.TooSmallError):
            tr.split_random(weight_dataset(ALKANES_12[:9]))

    def test_disjoint_union_recovers_dataset(self):
        ds = weight_dataset(ALKANES_12)
        parts = tr.split_random(ds, seed=7)
        got = [e for part in parts for e in part.entries]
        assert len(got) == len(ds)
        assert {id(e) for e in got} == {id(e) for e in ds.entries}

    def test_same_seed_same_split(self):
        ds = weight_dataset(ALKANES_12)
        first = tr.split_random(ds, seed=3)
        second = tr.split_random(ds, seed=3)
        for p, q in zip(first, second):
            assert [id(e) for e in p.entries] == [id(e) for e in q.entries]

    def test_different_seeds_differ(self):
        ds = weight_dataset(ALKANES_12)
        orders = {
            tuple(id(e) for part in tr.split_random(ds, seed=s) for e in part.entries)
            for s in range(5)
        }
        assert len(orders) > 1


class TestSplitByPredicate:
    def test_stable_partition(self):
        ds = weight_dataset(ALKANES_12)
        small, big = tr.split_by_predicate(ds, lambda g: len(g.atoms) <= 4)
        assert all(len(g.atoms) <= 4 for g, _ in small.entries)
        assert all(len(g.atoms) > 4 for g, _ in big.entries)
        assert len(small) + len(big) == len(ds)
        # stability: original relative order preserved in both halves
        pos = {id(e): i for i, e in enumerate(ds.entries)}
        for part in (small, big):
            ranks = [pos[id(e)] for e in part.entries]
            assert ranks == sorted(ranks)

    def test_empty_side_allowed(self):
        ds = weight_dataset(ALKANES_12)
        none, everything = tr.split_by_predicate(ds, lambda g: False)
        assert len(none) == 0 and len(everything) == len(ds)


# ---------------------------------------------------------------------------
# dataset container
# ---------------------------------------------------------------------------

def test_dataset_rejects_non_finite_target():
    g = parse_smiles("C")
    with pytest.raises(ValueError, match="entry 1"):
        tr.Dataset([(g, 1.0), (g, float("nan"))])


def test_train_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(learning_rate=-1.0)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class TestAdam:
    def test_first_step_is_lr_sized_sign_step(self):
        params = {"w": np.array([1.0, -2.0])}
        opt = tr.Adam(params, lr=0.1)
        opt.step({"w": np.array([3.0, -4.0])})
        # bias-corrected first step is lr * g / (|g| + eps') ~= lr * sign(g)
        assert np.allclose(params["w"], [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)

    def test_converges_on_quadratic(self):
        params = {"w": np.array([5.0])}
        opt = tr.Adam(params, lr=0.05)
        for _ in range(600):
            opt.step({"w": 2.0 * (params["w"] - 3.0)})
        assert abs(params["w"][0] - 3.0) < 1e-2

    def test_updates_in_place(self):
        arr = np.zeros(2)
        opt = tr.Adam({"w": arr})
        opt.step({"w": np.ones(2)})
        assert arr is opt.params["w"]
        assert not np.all(arr == 0.0)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

class TestTrainModel:
    def test_history_shape_and_fields(self):
        model = quick_train(weight_dataset(ALKANES_12), epochs=4)
        assert [h["epoch"] for h in model.history] == [1, 2, 3, 4]
        for h in model.history:
            assert set(h) == {"epoch", "train_mse", "val_mae"}
            assert np.isfinite(h["train_mse"]) and np.isfinite(h["val_mae"])

    def test_standardizer_roundtrip_is_identity(self):
        ds = weight_dataset(ALKANES_12)
        model = quick_train(ds, epochs=1)
        raw = ds.targets()
        back = (raw - model.target_mean) / model.target_std \
            * model.target_std + model.target_mean
        assert np.allclose(back, raw, atol=1e-12)

    def test_constant_target_sets_unit_std(self):
        g = [parse_smiles(s) for s in ALKANES_12]
        ds = tr.Dataset([(x, 7.5) for x in g])
        model = quick_train(ds, epochs=2)
        assert model.target_std == 1.0 and model.target_mean == 7.5

    def test_constant_target_loss_mostly_decreases(self):
        g = [parse_smiles(s) for s in ALKANES_12]
        ds = tr.Dataset([(x, 7.5) for x in g])
        model = quick_train(ds, epochs=40)
        mse = [h["train_mse"] for h in model.history]
        drops = [mse[i] <= mse[i - 1] for i in range(5, len(mse))]
        assert np.mean(drops) >= 0.9

    def test_memorizes_two_molecules(self):
        ds = tr.Dataset([(parse_smiles("C"), 1.0), (parse_smiles("CCO"), 3.0)])
        model = quick_train(ds, epochs=800, val=ds)
        assert tr.evaluate(model, ds) < 0.15

    def test_best_snapshot_matches_history_minimum(self):
        ds = weight_dataset(ALKANES_12)
        train_ds, val_ds, _ = tr.split_random(ds, seed=2)
        cfg = tr.TrainConfig(epochs=25, batch_size=4, seed=2)
        model = tr.train_model(train_ds, val_ds, SMALL_GNN, SUM, cfg,
                               feature_config=HCOUNT)
        best = min(h["val_mae"] for h in model.history)
        assert abs(tr.evaluate(model, val_ds) - best) < 1e-9
        assert model.history[model.best_epoch - 1]["val_mae"] == best

    def test_same_seed_bitwise_identical(self):
        ds = weight_dataset(ALKANES_12)
        runs = [quick_train(ds, epochs=8, seed=11) for _ in range(2)]
        assert runs[0].history == runs[1].history
        assert runs[0].params.keys() == runs[1].params.keys()
        for k in runs[0].params:
            assert np.array_equal(runs[0].params[k], runs[1].params[k])

    def test_different_seed_changes_history(self):
        ds = weight_dataset(ALKANES_12)
        a = quick_train(ds, epochs=5, seed=0)
        b = quick_train(ds, epochs=5, seed=1)
        assert a.history != b.history

    def test_empty_splits_rejected(self):
        ds = weight_dataset(ALKANES_12)
        empty = tr.Dataset([], "empty")
        cfg = tr.TrainConfig(epochs=1)
        with pytest.raises(tr.EmptySplitError):
            tr.train_model(empty, ds, SMALL_GNN, SUM, cfg)
        with pytest.raises(tr.EmptySplitError):
            tr.train_model(ds, empty, SMALL_GNN, SUM, cfg)
        with pytest.raises(tr.EmptySplitError):
            tr.evaluate(quick_train(ds, epochs=1), empty)

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_divergence_reports_batch_index(self):
        ds = weight_dataset(ALKANES_12)
        cfg = tr.TrainConfig(epochs=6, batch_size=4, seed=0,
                             learning_rate=1e120)
        with pytest.raises(T.NonFiniteError, match=r"epoch \d+, batch \d+"):
            tr.train_model(ds, ds, SMALL_GNN, SUM, cfg, feature_config=HCOUNT)


# ---------------------------------------------------------------------------
# synthetic oracle targets
# ---------------------------------------------------------------------------

class TestSyntheticTargets:
    def test_methane_worked_example(self):
        table = {(Element.C, Hybridization.SP3): 1.0}
        assert tr.synthetic_additive_target(parse_smiles("C"), table) == 3.0

    def test_default_table_ethanol(self):
        got = tr.synthetic_additive_target(parse_smiles("CCO"))
        assert abs(got - (2 * 1.061 + 0.637 + 0.5 * 6)) < 1e-12

    def test_additive_equals_per_atom_sum(self):
        g = parse_smiles("c1ccccc1C#N")
        expect = sum(tr.ADDITIVE_TABLE[(a.element, a.hybridization)]
                     + 0.5 * a.implicit_h_count for a in g.atoms)
        assert tr.synthetic_additive_target(g) == pytest.approx(expect, abs=1e-12)

    def test_atom_order_invariance(self):
        assert tr.synthetic_additive_target(parse_smiles("OCC")) == \
            pytest.approx(tr.synthetic_additive_target(parse_smiles("CCO")), abs=1e-12)

    def test_size_independent_constant_on_alkanes(self):
        vals = [tr.synthetic_size_independent_target(parse_smiles(s))
                for s in ("C", "CCC", "CCCCCCCCCC")]
        assert all(abs(v - 1.061) < 1e-12 for v in vals)

    def test_size_independent_is_mean_of_terms(self):
        g = parse_smiles("CC=O")
        expect = np.mean([tr.ADDITIVE_TABLE[(a.element, a.hybridization)]
                          for a in g.atoms])
        assert tr.synthetic_size_independent_target(g) == pytest.approx(expect)

    def test_missing_entry_raises(self):
        table = {(Element.C, Hybridization.SP3): 1.0}
        with pytest.raises(tr.MissingTableEntryError, match="C/SP2"):
            tr.synthetic_additive_target(parse_smiles("C=C"), table)

    def test_default_table_covers_generator_output(self):
        from molpool.molgraph import generate_molecules
        graphs = generate_molecules({4: 30, 6: 30}, seed=5)
        for g in graphs:
            tr.synthetic_additive_target(g)  # must not raise


# ---------------------------------------------------------------------------
# CSV round trips
# ---------------------------------------------------------------------------

class TestDatasetCsv:
    def test_roundtrip_exact(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = [("CCO", 46.069), ("C", 16.043), ("c1ccccc1", 78.114)]
        tr.write_dataset_csv(path, rows)
        ds = tr.read_dataset_csv(path)
        assert len(ds) == 3
        assert ds.targets().tolist() == [46.069, 16.043, 78.114]
        assert [len(g.atoms) for g in ds.graphs()] == [3, 1, 6]

    def test_bad_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("smile,target\nC,1.0\n")
        with pytest.raises(tr.BadCsvError, match="line 1"):
            tr.read_dataset_csv(path)

    def test_bad_smiles_carries_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("smiles,target\nC,1.0\nC((C,2.0\n")
        with pytest.raises(tr.BadCsvError, match="line 3") as err:
            tr.read_dataset_csv(path)
        assert err.value.line == 3

    def test_bad_target_value(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("smiles,target\nC,abc\n")
        with pytest.raises(tr.BadCsvError, match="line 2"):
            tr.read_dataset_csv(path)

    def test_missing_target(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("smiles,target\nCCO,\n")
        with pytest.raises(tr.MissingTargetError):
            tr.read_dataset_csv(path)

    def test_missing_target_is_bad_csv_subtype(self):
        assert issubclass(tr.MissingTargetError, tr.BadCsvError)

    def test_extra_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("smiles,target\nC,1.0,5\n")
        with pytest.raises(tr.BadCsvError, match="line 2"):
            tr.read_dataset_csv(path)

    def test_history_csv(self, tmp_path):
        path = tmp_path / "h.csv"
        tr.write_history_csv(path, [
            {"epoch": 1, "train_mse": 0.5, "val_mae": 2.0},
            {"epoch": 2, "train_mse": 0.25, "val_mae": 1.5},
        ])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_mse,val_mae"
        assert lines[1] == "1,0.5,2.0"
        assert len(lines) == 3
