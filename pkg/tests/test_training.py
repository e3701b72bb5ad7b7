"""Hard negatives, the NT-Xent objective, and the training loop."""

import json
import math

import numpy as np
import pytest

from mlkg.config import substream
from mlkg.embeddings import HashedSource
from mlkg.graph import build_graph
from mlkg.model import ModelConfig, init_params
from mlkg.training import (
    TrainConfig,
    TrainingExample,
    nt_xent_loss,
    read_examples,
    sample_hard_negatives,
    train,
    write_examples,
)

from conftest import make_bundle, path_bundle
from oracles import ref_nt_xent

LOG_1P_EXP_M2 = 0.12692801104297263  # log(1 + e^-2) to double precision


def flat_bundle(doc_ids):
    """One single-chunk document per id, each with one unique triple."""
    return make_bundle(
        [
            (
                doc_id,
                f"Title {i}",
                f"entity{i} points nowhere{i}.",
                [(f"{doc_id}-c0", f"entity{i} points nowhere{i}.",
                  [(f"entity{i}", "points", f"nowhere{i}")])],
            )
            for i, doc_id in enumerate(doc_ids)
        ]
    )


class TestNtXentLoss:
    def test_single_opposed_negative_hand_value(self):
        loss = nt_xent_loss(
            np.array([1.0, 0.0]),
            np.array([1.0, 0.0]),
            np.array([[-1.0, 0.0]]),
            tau=1.0,
        )
        assert abs(loss - LOG_1P_EXP_M2) < 1e-15

    @pytest.mark.parametrize("m", [1, 3, 7])
    def test_identical_vectors_give_log_m_plus_one(self, m):
        v = np.array([0.6, 0.8])
        loss = nt_xent_loss(v, v, np.tile(v, (m, 1)), tau=0.5)
        assert abs(loss - math.log(m + 1)) < 1e-12

    def test_monotone_in_positive_similarity(self):
        negs = np.array([[0.0, 1.0], [1.0, 1.0]])
        q = np.array([1.0, 0.0])
        angles = np.linspace(0.0, math.pi / 2, 8)
        losses = [
            nt_xent_loss(q, np.array([math.cos(a), math.sin(a)]), negs, tau=0.7)
            for a in angles
        ]
        assert all(losses[i] < losses[i + 1] for i in range(len(losses) - 1))

    def test_huge_tau_flattens_to_uniform(self):
        rng = np.random.default_rng(3)
        q = rng.standard_normal(6)
        pos = rng.standard_normal(6)
        negs = rng.standard_normal((4, 6))
        assert abs(nt_xent_loss(q, pos, negs, tau=1e6) - math.log(5)) < 1e-6

    def test_zero_query_guard_gives_uniform(self):
        rng = np.random.default_rng(4)
        loss = nt_xent_loss(
            np.zeros(5), rng.standard_normal(5), rng.standard_normal((3, 5)), tau=1.0
        )
        assert abs(loss - math.log(4)) < 1e-15

    def test_matches_reference_on_random_inputs(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            q = rng.standard_normal(8)
            pos = rng.standard_normal(8)
            negs = rng.standard_normal((int(rng.integers(1, 6)), 8))
            tau = float(rng.uniform(0.1, 3.0))

            def cos(u, v):
                return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))

            scores = [cos(q, pos)] + [cos(q, neg) for neg in negs]
            assert abs(nt_xent_loss(q, pos, negs, tau) - ref_nt_xent(scores, tau)) < 1e-12

    def test_tau_zero_rejected(self):
        v = np.array([1.0, 0.0])
        with pytest.raises(ValueError, match="tau"):
            nt_xent_loss(v, v, v[None, :], tau=0.0)

    def test_non_finite_positive_rejected(self):
        v = np.array([1.0, 0.0])
        with pytest.raises(FloatingPointError):
            nt_xent_loss(v, np.array([np.nan, 0.0]), v[None, :], tau=1.0)

    def test_non_finite_negative_rejected(self):
        v = np.array([1.0, 0.0])
        with pytest.raises(FloatingPointError):
            nt_xent_loss(v, v, np.array([[np.inf, 0.0]]), tau=1.0)


class TestSampleHardNegatives:
    def _oracle(self, g, matrix, query, support, k):
        support = set(support)
        candidates = [i for i, d in enumerate(g.doc_ids) if d not in support]
        sims = {
            i: float(np.dot(matrix[i], query)
                     / (np.linalg.norm(matrix[i]) * np.linalg.norm(query)))
            for i in candidates
        }
        ranked = sorted(candidates, key=lambda i: (-sims[i], g.doc_ids[i]))
        return tuple(g.doc_ids[i] for i in ranked[:k])

    def test_matches_brute_force_on_random_instances(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 9))
            g = build_graph(flat_bundle([f"d{i:02d}" for i in range(n)]))
            matrix = rng.standard_normal((n, 6))
            query = rng.standard_normal(6)
            support = tuple(
                g.doc_ids[i]
                for i in rng.choice(n, size=int(rng.integers(1, n - 1)), replace=False)
            )
            k = int(rng.integers(1, n - len(support) + 1))
            got = sample_hard_negatives(g, matrix, query, support, k, rng)
            assert got == self._oracle(g, matrix, query, support, k)

    def test_ties_break_by_ascending_doc_id(self):
        g = build_graph(flat_bundle(["zz", "mm", "aa", "qq"]))
        row = np.array([1.0, 2.0, 3.0])
        matrix = np.tile(row, (4, 1))  # all docs equally similar
        got = sample_hard_negatives(
            g, matrix, row, ("qq",), 3, np.random.default_rng(0)
        )
        assert got == ("aa", "mm", "zz")

    def test_support_never_sampled_even_when_padding(self, rng):
        g = build_graph(flat_bundle(["d0", "d1", "d2"]))
        matrix = rng.standard_normal((3, 4))
        query = rng.standard_normal(4)
        for _ in range(200):
            got = sample_hard_negatives(g, matrix, query, ("d0", "d2"), 5, rng)
            assert len(got) == 5
            assert set(got) == {"d1"}

    def test_padding_prefix_is_the_full_ranking(self, rng):
        g = build_graph(flat_bundle(["d0", "d1", "d2", "d3"]))
        matrix = rng.standard_normal((4, 5))
        query = rng.standard_normal(5)
        got = sample_hard_negatives(g, matrix, query, ("d3",), 7, rng)
        assert len(got) == 7
        assert got[:3] == self._oracle(g, matrix, query, ("d3",), 3)
        assert set(got[3:]) <= {"d0", "d1", "d2"}

    def test_no_candidates_rejected(self, rng):
        g = build_graph(flat_bundle(["d0", "d1"]))
        matrix = rng.standard_normal((2, 4))
        with pytest.raises(ValueError, match="non-support"):
            sample_hard_negatives(
                g, matrix, rng.standard_normal(4), ("d0", "d1"), 2, rng
            )


class TestTrainConfig:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"tau": 0.0},
            {"tau": -1.0},
            {"negatives_k": 0},
            {"holdout_fraction": 1.0},
            {"holdout_fraction": -0.1},
            {"lr": -1e-4},
            {"max_epochs": 0},
            {"checkpoint_every": 0},
            {"batch_size": 0},
        ],
    )
    def test_invalid_values_rejected(self, overrides):
        base = dict(lr=1e-3, max_epochs=1, checkpoint_every=1)
        base.update(overrides)
        with pytest.raises(ValueError):
            TrainConfig(**base)

    def test_mode_presets_and_overrides(self):
        pre = TrainConfig.pretrain()
        fine = TrainConfig.finetune()
        assert pre.lr < fine.lr
        assert TrainConfig.pretrain(lr=0.5).lr == 0.5
        assert TrainConfig.finetune(max_epochs=9).max_epochs == 9


def small_training_setup(n_examples=4, seed=0, dim=4):
    g = build_graph(path_bundle())
    source = HashedSource(seed, 16)
    params = init_params(
        ModelConfig(raw_dim=16, dim=dim, layers=1), np.random.default_rng(seed)
    )
    examples = [
        TrainingExample(
            f"which document mentions e{i % 4 + 1}?",
            (g.doc_ids[i % len(g.doc_ids)],),
        )
        for i in range(n_examples)
    ]
    return g, source, params, examples


class TestTrainLoop:
    def test_zero_lr_leaves_params_unchanged(self):
        g, source, params, examples = small_training_setup()
        config = TrainConfig(
            lr=0.0, max_epochs=3, checkpoint_every=100,
            negatives_k=2, holdout_fraction=0.0, seed=1,
        )
        result = train(g, examples, config, params, source)
        final = result.checkpoints[-1].params
        for name, tensor in params.tensors.items():
            assert np.array_equal(final.tensors[name], tensor)
        first = result.step_losses[0]
        assert all(abs(loss - first) < 1e-12 for loss in result.step_losses)

    def test_input_params_never_mutated(self):
        g, source, params, examples = small_training_setup()
        before = {k: v.copy() for k, v in params.tensors.items()}
        config = TrainConfig(
            lr=1e-2, max_epochs=2, checkpoint_every=100,
            negatives_k=2, holdout_fraction=0.0, seed=1,
        )
        result = train(g, examples, config, params, source)
        for name, tensor in params.tensors.items():
            assert np.array_equal(tensor, before[name])
        assert not np.array_equal(
            result.checkpoints[-1].params.tensors["w_in"], before["w_in"]
        )

    def test_two_runs_are_identical(self, tmp_path):
        g, source, params, examples = small_training_setup(n_examples=6)
        config = TrainConfig(
            lr=1e-3, max_epochs=2, checkpoint_every=3,
            negatives_k=2, holdout_fraction=0.2, batch_size=2, seed=7,
        )
        dirs = [tmp_path / "run-a", tmp_path / "run-b"]
        results = [
            train(g, examples, config, params, source, out_dir=d) for d in dirs
        ]
        assert results[0].step_losses == results[1].step_losses
        assert results[0].best_step == results[1].best_step
        final = [r.checkpoints[-1] for r in results]
        assert final[0].path.read_bytes() == final[1].path.read_bytes()

    def test_holdout_example_does_not_influence_training(self):
        g, source, params, _ = small_training_setup()
        n = 7
        config = TrainConfig(
            lr=1e-3, max_epochs=2, checkpoint_every=100,
            negatives_k=1, holdout_fraction=0.15, batch_size=3, seed=5,
        )
        assert int(n * config.holdout_fraction) == 1
        holdout_input_index = int(substream(config.seed, "shuffle").permutation(n)[0])

        def build_examples(holdout_query):
            examples = []
            for i in range(n):
                support = g.doc_ids[i % len(g.doc_ids)]
                negative = g.doc_ids[(i + 1) % len(g.doc_ids)]
                query = f"query number {i}?"
                if i == holdout_input_index:
                    query = holdout_query
                examples.append(TrainingExample(query, (support,), (negative,)))
            return examples

        result_a = train(
            g, build_examples("held out phrasing one?"), config, params, source
        )
        result_b = train(
            g, build_examples("held out phrasing two, very different?"), config,
            params, source,
        )
        assert result_a.holdout_size == 1
        assert result_a.step_losses == result_b.step_losses
        final_a = result_a.checkpoints[-1].params
        final_b = result_b.checkpoints[-1].params
        for name in final_a.tensors:
            assert np.array_equal(final_a.tensors[name], final_b.tensors[name])

    def test_checkpoint_cadence_and_final(self, tmp_path):
        g, source, params, examples = small_training_setup(n_examples=2)
        config = TrainConfig(
            lr=1e-3, max_epochs=5, checkpoint_every=2,
            negatives_k=2, holdout_fraction=0.0, batch_size=32, seed=0,
        )
        result = train(
            g, examples, config, params, source, out_dir=tmp_path, mode="finetune"
        )
        assert [c.step for c in result.checkpoints] == [2, 4, 5]
        assert len(result.step_losses) == 5
        for ckpt in result.checkpoints:
            manifest = json.loads(
                (ckpt.path.parent / "manifest.json").read_text(encoding="utf-8")
            )
            assert manifest["step"] == ckpt.step
            assert manifest["mode"] == "finetune"
            assert manifest["holdout_recall_at_5"] is None

    def test_empty_holdout_selects_final_checkpoint(self):
        g, source, params, examples = small_training_setup(n_examples=2)
        config = TrainConfig(
            lr=1e-3, max_epochs=3, checkpoint_every=100,
            negatives_k=2, holdout_fraction=0.0, seed=0,
        )
        result = train(g, examples, config, params, source)
        assert result.holdout_size == 0
        assert result.best_step == result.checkpoints[-1].step
        final = result.checkpoints[-1].params
        for name in final.tensors:
            assert np.array_equal(result.best.tensors[name], final.tensors[name])

    def test_tied_holdout_recall_selects_latest(self):
        # four documents and k=5 make recall@5 always 1.0, so every
        # checkpoint ties and the latest must win
        g, source, params, examples = small_training_setup(n_examples=8)
        config = TrainConfig(
            lr=1e-3, max_epochs=4, checkpoint_every=1,
            negatives_k=2, holdout_fraction=0.2, batch_size=32, seed=3,
        )
        result = train(g, examples, config, params, source)
        assert result.holdout_size == 1
        recalls = [c.holdout_recall_at_5 for c in result.checkpoints]
        assert all(r == 1.0 for r in recalls)
        assert result.best_step == result.checkpoints[-1].step

    def test_no_examples_rejected(self):
        g, source, params, _ = small_training_setup()
        config = TrainConfig(lr=1e-3, max_epochs=1, checkpoint_every=1)
        with pytest.raises(ValueError, match="no training examples"):
            train(g, [], config, params, source)

    def test_unknown_support_doc_rejected(self):
        g, source, params, _ = small_training_setup()
        config = TrainConfig(lr=1e-3, max_epochs=1, checkpoint_every=1)
        with pytest.raises(KeyError, match="unknown doc_id"):
            train(g, [TrainingExample("q?", ("nope",))], config, params, source)

    def test_wrong_negative_count_rejected(self):
        g, source, params, _ = small_training_setup()
        config = TrainConfig(
            lr=1e-3, max_epochs=1, checkpoint_every=1, negatives_k=3
        )
        bad = TrainingExample("q?", ("doc-A",), ("doc-B", "doc-C"))
        with pytest.raises(ValueError, match="2 negatives, expected 3"):
            train(g, [bad], config, params, source)

    def test_support_negative_overlap_rejected(self):
        g, source, params, _ = small_training_setup()
        config = TrainConfig(
            lr=1e-3, max_epochs=1, checkpoint_every=1, negatives_k=1
        )
        bad = TrainingExample("q?", ("doc-A",), ("doc-A",))
        with pytest.raises(ValueError, match="overlap"):
            train(g, [bad], config, params, source)


class TestExamplesIO:
    def test_round_trip(self, tmp_path):
        examples = [
            TrainingExample("who made x?", ("d1",), ("d2", "d3")),
            TrainingExample("unicode über query?", ("d2", "d1")),
        ]
        path = tmp_path / "examples.jsonl"
        write_examples(examples, path)
        assert read_examples(path) == examples

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "examples.jsonl"
        path.write_text(
            '\n{"query": "q?", "support_doc_ids": ["d1"]}\n\n', encoding="utf-8"
        )
        assert read_examples(path) == [TrainingExample("q?", ("d1",))]

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "examples.jsonl"
        path.write_text(
            '{"query": "q?", "support_doc_ids": ["d1"]}\n{oops\n', encoding="utf-8"
        )
        with pytest.raises(ValueError, match=r"examples\.jsonl:2"):
            read_examples(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "examples.jsonl"
        path.write_text('{"query": "q?"}\n', encoding="utf-8")
        with pytest.raises(ValueError, match="support_doc_ids"):
            read_examples(path)
