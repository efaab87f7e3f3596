from itertools import chain, combinations

import numpy as np
import pytest
import torch

from groundedmt.gradcheck import micro_setup
from groundedmt.losses import (
    MaskSample,
    compute_loss_bundle,
    hard_mask,
    masked_pass_losses,
    object_masking_loss,
    sample_mask_sets,
    total_loss,
    vision_weighted_loss,
)
from groundedmt.types import ObjectSet


class TestSampleMaskSets:
    def test_single_irrelevant_candidate(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = sample_mask_sets(np.array([1, 1, 0]), rng)
            assert s.irrelevant == (2,)
            assert s.relevant and set(s.relevant) <= {0, 1}

    def test_all_relevant_leaves_irrelevant_empty(self):
        rng = np.random.default_rng(1)
        s = sample_mask_sets(np.ones(4, dtype=int), rng)
        assert s.irrelevant == ()
        assert s.relevant

    def test_every_legal_homogeneous_subset_appears(self):
        # enumeration oracle: non-empty subsets of each class
        def subsets(pool):
            return set(
                chain.from_iterable(
                    combinations(pool, k) for k in range(1, len(pool) + 1)
                )
            )

        legal_rel = subsets((0, 2))
        legal_irr = subsets((1, 3))
        rng = np.random.default_rng(2)
        seen_rel, seen_irr = set(), set()
        for _ in range(10_000):
            s = sample_mask_sets(np.array([1, 0, 1, 0]), rng)
            assert s.relevant in legal_rel
            assert s.irrelevant in legal_irr
            seen_rel.add(s.relevant)
            seen_irr.add(s.irrelevant)
        assert seen_rel == legal_rel
        assert seen_irr == legal_irr


class TestHardMask:
    def test_all_relevant_is_identity(self):
        objs = ObjectSet(np.ones((3, 2), dtype=np.float32), ["a", "b", "c"])
        out = hard_mask(objs, np.ones(3, dtype=int))
        assert not out.masked.any()
        assert np.array_equal(out.features, objs.features)

    def test_all_irrelevant_masks_everything(self):
        objs = ObjectSet(np.ones((3, 2), dtype=np.float32), ["a", "b", "c"])
        out = hard_mask(objs, np.zeros(3, dtype=int))
        assert out.masked.all()
        assert np.array_equal(out.effective_features(), np.zeros((3, 2)))

    def test_mixed_indicator_masks_exact_set(self):
        rng = np.random.default_rng(3)
        d = rng.integers(0, 2, size=8)
        objs = ObjectSet(
            rng.standard_normal((8, 4)).astype(np.float32), [f"c{i}" for i in range(8)]
        )
        out = hard_mask(objs, d)
        # set-comparison oracle
        assert set(np.flatnonzero(out.masked)) == set(np.flatnonzero(d == 0))
        assert not objs.masked.any()  # input untouched

    def test_existing_masks_are_kept(self):
        objs = ObjectSet(
            np.ones((2, 2), dtype=np.float32), ["a", "b"], masked=[True, False]
        )
        out = hard_mask(objs, np.array([1, 1]))
        assert out.masked.tolist() == [True, False]


class TestFormulaOps:
    def test_masking_loss_zero_when_no_deltas(self):
        assert object_masking_loss(1.0, 1.0, 1.0) == 0.0

    def test_masking_loss_direct_cases(self):
        assert object_masking_loss(1.0, 1.5, 1.2) == pytest.approx(-0.46)
        assert object_masking_loss(2.0, 2.0, 3.0) == pytest.approx(1.0)

    def test_masking_loss_shift_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            lo, lr, lir, c = rng.standard_normal(4)
            assert object_masking_loss(lo + c, lr + c, lir + c) == pytest.approx(
                object_masking_loss(lo, lr, lir), abs=1e-9
            )

    def test_masking_loss_partials(self):
        lo = torch.tensor(1.3, requires_grad=True)
        lr = torch.tensor(2.1, requires_grad=True)
        lir = torch.tensor(0.7, requires_grad=True)
        object_masking_loss(lo, lr, lir).backward()
        assert lr.grad.item() == pytest.approx(-1.0)
        assert lir.grad.item() == pytest.approx(2 * (0.7 - 1.3))

    def test_vision_loss_uniform_reduces_to_mean(self):
        nll = torch.tensor([1.0, 2.0, 3.0])
        q = torch.full((3,), 1 / 3)
        assert vision_weighted_loss(nll, q).item() == pytest.approx(nll.mean().item())

    def test_vision_loss_one_hot_selects(self):
        nll = torch.tensor([1.0, 2.0, 3.0])
        assert vision_weighted_loss(nll, torch.tensor([0.0, 1.0, 0.0])).item() == 2.0

    def test_vision_loss_direct_dot(self):
        got = vision_weighted_loss(
            torch.tensor([1.0, 2.0, 3.0]), torch.tensor([0.2, 0.3, 0.5])
        )
        assert got.item() == pytest.approx(2.3)

    def test_vision_loss_length_mismatch_errors(self):
        with pytest.raises(ValueError, match="one weight per token"):
            vision_weighted_loss(torch.ones(3), torch.ones(2))

    def test_total_loss_direct(self):
        assert total_loss(1.0, 1.0, 1.0, 0.0, 1.0, 0.1, 0.1) == pytest.approx(1.1)

    def test_total_loss_zero_weights_is_mean(self):
        assert total_loss(1.0, 2.0, 3.0, 5.0, 7.0, 0.0, 0.0) == pytest.approx(2.0)

    def test_total_loss_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, 1.0, 0.0, 0.0, -0.1, 0.0)


class TestMaskedPassLosses:
    def test_empty_sets_return_base_tensor(self):
        model, batch, _ = micro_setup(seed=1)
        base, _, _ = model.per_example_nll(batch)
        rel, irr = masked_pass_losses(model, batch, [MaskSample()], base)
        assert rel is base and irr is base

    def test_masking_already_masked_object_changes_nothing(self):
        model, batch, _ = micro_setup(seed=2)
        batch.obj_feats[:, 1] = 0.0  # object 1 is already a zero vector
        base, _, _ = model.per_example_nll(batch)
        rel, irr = masked_pass_losses(
            model, batch, [MaskSample(relevant=(1,), irrelevant=())], base
        )
        assert torch.equal(rel, base)

    def test_matches_independent_recomputation(self):
        # oracle: rebuild the batch with hand-zeroed features and run the
        # plain teacher-forced forward
        model, batch, _ = micro_setup(seed=3, m=4)
        sample = MaskSample(relevant=(0, 2), irrelevant=(3,))
        base, _, _ = model.per_example_nll(batch)
        rel, irr = masked_pass_losses(model, batch, [sample], base)

        hand = batch.obj_feats.clone()
        hand[0, [0, 2]] = 0.0
        expected_rel, _, _ = model.per_example_nll(batch, obj_feats_override=hand)
        assert torch.equal(rel, expected_rel)

        hand = batch.obj_feats.clone()
        hand[0, [3]] = 0.0
        expected_irr, _, _ = model.per_example_nll(batch, obj_feats_override=hand)
        assert torch.equal(irr, expected_irr)

    def test_does_not_mutate_batch_features(self):
        model, batch, samples = micro_setup(seed=4)
        before = batch.obj_feats.clone()
        masked_pass_losses(model, batch, samples)
        assert torch.equal(batch.obj_feats, before)


class TestComputeLossBundle:
    def test_component_losses_nonnegative_and_consistent(self):
        model, batch, samples = micro_setup(seed=5)
        bundle = compute_loss_bundle(model, batch, 0.1, 0.1, mask_samples=samples)
        s = bundle.scalars()
        assert s["L_o"] >= 0 and s["L_r"] >= 0 and s["L_ir"] >= 0 and s["L_v"] >= 0
        assert s["L_ovc"] == pytest.approx(
            (s["L_o"] + s["L_r"] + s["L_ir"]) / 3 + 0.1 * s["L_m"] + 0.1 * s["L_v"],
            rel=1e-9,
        )
        assert s["L_m"] == pytest.approx(
            -(s["L_r"] - s["L_o"]) + (s["L_ir"] - s["L_o"]) ** 2, rel=1e-9
        )

    def test_mean_nll_equals_base_loss(self):
        model, batch, _ = micro_setup(seed=6)
        bundle = compute_loss_bundle(model, batch, 0.0, 0.0, sample_masks=False)
        nll, mask = model.forward_teacher_forced(batch)
        assert bundle.base.item() == pytest.approx(nll[mask].mean().item(), rel=1e-12)

    def test_plain_step_is_bitwise_cross_entropy_step(self):
        model_a, batch, _ = micro_setup(seed=7)
        model_b, _, _ = micro_setup(seed=7)
        opt_a = torch.optim.Adam(model_a.parameters(), lr=1e-3)
        opt_b = torch.optim.Adam(model_b.parameters(), lr=1e-3)

        bundle = compute_loss_bundle(model_a, batch, 0.0, 0.0, sample_masks=False)
        opt_a.zero_grad()
        bundle.total.backward()
        opt_a.step()

        per_example, _, _ = model_b.per_example_nll(batch)
        opt_b.zero_grad()
        per_example.mean().backward()
        opt_b.step()

        for (na, pa), (nb, pb) in zip(
            model_a.state_dict().items(), model_b.state_dict().items()
        ):
            assert na == nb
            assert torch.equal(pa, pb), f"{na} differs"

    def test_sampling_requires_indicators(self):
        model, batch, _ = micro_setup(seed=8)
        with pytest.raises(ValueError, match="relevance indicators"):
            compute_loss_bundle(
                model, batch, 0.1, 0.0, rng=np.random.default_rng(0), sample_masks=True
            )

    def test_beta_requires_vision_weights(self):
        model, batch, _ = micro_setup(seed=9)
        batch.q = None
        with pytest.raises(ValueError, match="vision weights"):
            compute_loss_bundle(model, batch, 0.0, 0.1, sample_masks=False)
