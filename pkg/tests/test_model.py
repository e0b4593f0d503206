"""Feature stacking, BiGRU recurrence, span/type heads, loss, and the
history-related invariants."""
import math

import numpy as np
import pytest

from convmc import autodiff as ad
from convmc.autodiff import Tensor
from convmc.encoder import EncoderConfig
from convmc.gradcheck import check_gradients, full_pipeline_check, tiny_setup
from convmc.model import (
    AnswerType,
    BiGRU,
    CMCConfig,
    CMCModel,
    DialogueContext,
    WindowOutput,
)
from convmc.tokenizer import ConfigError, Vocabulary, Window

WORDS = ["ant", "bee", "cow", "dog", "elk", "fox", "gnu", "hen", "owl", "pig"]


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.build([" ".join(WORDS)])


def make_model(vocab, k=1, d=8, layers=1, type_head=True, seed=0, **cmc_kwargs):
    enc = EncoderConfig(
        vocab_size=len(vocab), hidden=d, layers=layers, heads=2,
        ff_dim=2 * d, max_positions=64, dropout=0.0,
    )
    return CMCModel(
        enc,
        CMCConfig(k=k, **cmc_kwargs),
        type_head=type_head,
        max_seq_len=40,
        max_query_len=8,
        seed=seed,
    )


def ctx_for(k, question="ant bee", q_hist=None, a_hist=None, turn=2):
    qs = tuple((q_hist or [None] * k)[:k])
    ans = tuple((a_hist or [None] * k)[:k])
    return DialogueContext(question=question, prev_questions=qs, prev_answers=ans, turn=turn)


WINDOW = Window(("cow", "dog", "elk", "fox", "gnu"), 0)


class TestBuildG:
    def test_k0_is_single_block(self, vocab):
        model = make_model(vocab, k=0)
        g = model.build_g(ctx_for(0), WINDOW, vocab)
        z = model.build_g(ctx_for(0), WINDOW, vocab)
        assert g.shape == (8, 5)
        np.testing.assert_array_equal(g.data, z.data)

    def test_shape_arithmetic(self, vocab):
        model = make_model(vocab, k=2, d=16)
        ctx = ctx_for(2, q_hist=["cow dog", "elk"], a_hist=["fox", "gnu"])
        g = model.build_g(ctx, Window(tuple(WORDS), 0), vocab)
        assert g.shape == (5 * 16, 10)

    def test_first_turn_history_blocks_zero(self, vocab):
        model = make_model(vocab, k=2, d=8)
        ctx = ctx_for(2, turn=1)  # all-null history
        g = model.build_g(ctx, WINDOW, vocab).data
        assert np.abs(g[8:, :]).max() == 0.0
        assert np.abs(g[:8, :]).max() > 0.0

    def test_block_order_most_recent_first(self, vocab):
        model = make_model(vocab, k=2, d=8)
        only_recent_q = ctx_for(2, q_hist=["cow dog", None], a_hist=[None, None])
        g = model.build_g(only_recent_q, WINDOW, vocab).data
        assert np.abs(g[8:16]).max() > 0  # Q_{i-1} block
        assert np.abs(g[16:24]).max() == 0  # Q_{i-2} slot empty
        only_recent_a = ctx_for(2, q_hist=[None, None], a_hist=["fox", None])
        g = model.build_g(only_recent_a, WINDOW, vocab).data
        assert np.abs(g[24:32]).max() > 0  # A_{i-1} block
        assert np.abs(g[32:40]).max() == 0

    def test_wrong_context_width_rejected(self, vocab):
        model = make_model(vocab, k=2)
        with pytest.raises(ConfigError, match="k=2"):
            model.build_g(ctx_for(1), WINDOW, vocab)


class TestBiGRU:
    def test_output_shape(self):
        rng = np.random.default_rng(0)
        gru = BiGRU(6, 4, rng)
        for tlen in (1, 2, 9):
            out = gru(Tensor(rng.normal(size=(6, tlen))))
            assert out.shape == (8, tlen)

    def test_single_token_directions_agree_on_input(self):
        rng = np.random.default_rng(1)
        gru = BiGRU(3, 2, rng)
        x = Tensor(rng.normal(size=(3, 1)))
        out = gru(x).data
        # same single input, zero initial state, per-direction weights differ
        assert out.shape == (4, 1)

    def test_zero_input_zero_biases_gives_zero_output(self):
        rng = np.random.default_rng(2)
        gru = BiGRU(5, 3, rng)  # biases start at zero
        out = gru(Tensor(np.zeros((5, 7))))
        np.testing.assert_array_equal(out.data, np.zeros((6, 7)))

    def test_recurrence_matches_hand_rollout(self):
        rng = np.random.default_rng(3)
        gru = BiGRU(2, 2, rng)
        x = rng.normal(size=(2, 3))
        p = gru._dirs["fwd"]
        h = np.zeros((2, 1))
        for t in range(3):
            xt = x[:, [t]]
            zr = 1 / (1 + np.exp(-(p["w_zr"].data @ xt + p["u_zr"].data @ h + p["b_zr"].data)))
            z, r = zr[:2], zr[2:]
            c = np.tanh(p["w_c"].data @ xt + p["u_c"].data @ (r * h) + p["b_c"].data)
            h = (1 - z) * h + z * c
        out = gru(Tensor(x)).data
        np.testing.assert_allclose(out[:2, [2]], h, atol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        gru = BiGRU(3, 2, rng)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        params = dict(gru.named_parameters(), x=x)
        res = check_gradients(
            lambda: ad.tsum(ad.tanh(gru(x)) * gru(x)),
            params, name="bigru", n_coords=20, rng=rng,
        )
        assert res.passed, res.line()

    def test_wrong_input_rows(self):
        gru = BiGRU(3, 2, np.random.default_rng(0))
        with pytest.raises(ad.ShapeError):
            gru(Tensor(np.zeros((4, 5))))


class TestHeads:
    def test_projection_row_count(self, vocab):
        # (2k+3)d: k=2, d=16 -> 112
        model = make_model(vocab, k=2, d=16)
        assert model.start_w.shape == (1, 112)
        assert model.end_w.shape == (1, 112)
        assert model.type_w.shape == (4, 112)

    def test_distributions_sum_to_one(self, vocab):
        model = make_model(vocab, k=1)
        out = model.forward_window(ctx_for(1), WINDOW, vocab)
        np.testing.assert_allclose(out.p_start.data.sum(), 1.0, atol=1e-12)
        np.testing.assert_allclose(out.p_end.data.sum(), 1.0, atol=1e-12)

    def test_zero_projection_uniform(self, vocab):
        model = make_model(vocab, k=1)
        model.start_w.data[:] = 0.0
        model.start_b.data[:] = 0.0
        out = model.forward_window(ctx_for(1), WINDOW, vocab)
        np.testing.assert_allclose(out.p_start.data, 1.0 / 5, atol=1e-15)

    def test_type_head_four_way(self, vocab):
        model = make_model(vocab, k=1)
        out = model.forward_window(ctx_for(1), WINDOW, vocab)
        p = model.type_distribution(out.g, out.m2, 2)
        assert p.shape == (4, 1)
        np.testing.assert_allclose(p.data.sum(), 1.0, atol=1e-12)

    def test_type_zero_projection_uniform(self, vocab):
        model = make_model(vocab, k=1)
        model.type_w.data[:] = 0.0
        model.type_b.data[:] = 0.0
        out = model.forward_window(ctx_for(1), WINDOW, vocab)
        p = model.type_distribution(out.g, out.m2, 0)
        np.testing.assert_allclose(p.data, 0.25, atol=1e-15)

    def test_type_depends_on_end_index(self, vocab):
        model = make_model(vocab, k=1)
        out = model.forward_window(ctx_for(1), WINDOW, vocab)
        p0 = model.type_distribution(out.g, out.m2, 0).data
        p3 = model.type_distribution(out.g, out.m2, 3).data
        assert np.abs(p0 - p3).max() > 0

    def test_type_end_index_out_of_range(self, vocab):
        model = make_model(vocab, k=1)
        out = model.forward_window(ctx_for(1), WINDOW, vocab)
        with pytest.raises(IndexError):
            model.type_distribution(out.g, out.m2, 5)

    def test_no_type_head_raises(self, vocab):
        model = make_model(vocab, k=0, type_head=False)
        out = model.forward_window(ctx_for(0), WINDOW, vocab)
        with pytest.raises(RuntimeError, match="type head"):
            model.type_distribution(out.g, out.m2, 0)


def _uniform_output(t, origin=0):
    p = Tensor(np.full((1, t), 1.0 / t))
    g = Tensor(np.zeros((3, t)))
    return WindowOutput(p, p, g, g, Window(("x",) * t, origin))


class TestLoss:
    def test_perfect_prediction_zero_loss(self, vocab):
        out = _uniform_output(3)
        model = make_model(vocab, k=0)
        sharp = Tensor(np.array([[1.0 - 2e-16, 1e-16, 1e-16]]))
        out = WindowOutput(sharp, sharp, out.g, out.m2, out.window)
        loss, used, skipped = model.batch_loss([(out, 0, 0, None)])
        assert used == 1 and skipped == 0
        assert abs(loss.item()) < 1e-12

    def test_uniform_loss_closed_form(self, vocab):
        model = make_model(vocab, k=0)
        out = _uniform_output(10)
        loss, _, _ = model.batch_loss([(out, 3, 7, None)])
        assert abs(loss.item() - 2 * math.log(10)) < 1e-12

    def test_batch_mean(self, vocab):
        model = make_model(vocab, k=0)
        l1, _, _ = model.batch_loss([(_uniform_output(10), 0, 0, None)])
        l2, _, _ = model.batch_loss([(_uniform_output(4), 1, 2, None)])
        both, _, _ = model.batch_loss(
            [(_uniform_output(10), 0, 0, None), (_uniform_output(4), 1, 2, None)]
        )
        assert abs(both.item() - (l1.item() + l2.item()) / 2) < 1e-12

    def test_out_of_window_gold_skipped_with_counter(self, vocab):
        model = make_model(vocab, k=0)
        items = [(_uniform_output(5), 0, 1, None), (_uniform_output(5), 2, 7, None)]
        loss, used, skipped = model.batch_loss(items)
        assert (used, skipped) == (1, 1)
        with pytest.raises(ValueError, match="no usable"):
            model.batch_loss([(_uniform_output(5), 9, 9, None)])


class TestShapeLadder:
    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_shapes(self, vocab, k):
        d = 8
        model = make_model(vocab, k=k, d=d)
        q_hist = ["bee cow"] * k
        a_hist = ["dog"] * k
        ctx = ctx_for(k, q_hist=q_hist, a_hist=a_hist)
        g = model.build_g(ctx, WINDOW, vocab)
        t = len(WINDOW)
        assert g.shape == ((2 * k + 1) * d, t)
        m1 = model.bigru1(g)
        assert m1.shape == (2 * d, t)
        gm1 = ad.concat_rows([g, m1])
        assert gm1.shape == ((2 * k + 3) * d, t)
        p_end, m2 = model.end_distribution(g, m1)
        assert m2.shape == (2 * d, t)
        assert ad.concat_rows([g, m2]).shape == ((2 * k + 3) * d, t)


class TestHistorySensitivity:
    def test_k0_provably_history_independent(self, vocab):
        model = make_model(vocab, k=0)
        a = model.forward_window(ctx_for(0), WINDOW, vocab)
        b = model.forward_window(ctx_for(0), WINDOW, vocab)
        np.testing.assert_array_equal(a.p_start.data, b.p_start.data)

    def test_k1_answer_edit_changes_start(self, vocab):
        model = make_model(vocab, k=1)
        base = ctx_for(1, q_hist=["bee cow"], a_hist=["dog"])
        edit = ctx_for(1, q_hist=["bee cow"], a_hist=["owl"])
        pa = model.forward_window(base, WINDOW, vocab).p_start.data
        pb = model.forward_window(edit, WINDOW, vocab).p_start.data
        assert np.abs(pa - pb).max() > 0

    def test_ablation_equivalence(self, vocab):
        # disabling answer history == replacing answer slots with nulls
        on = make_model(vocab, k=2, use_answer_history=False)
        ctx_full = ctx_for(2, q_hist=["bee", "cow"], a_hist=["dog", "elk"])
        ctx_null = ctx_for(2, q_hist=["bee", "cow"], a_hist=[None, None])
        va = on.forward_window(ctx_full, WINDOW, vocab)
        on.cmc_cfg.use_answer_history = True
        vb = on.forward_window(ctx_null, WINDOW, vocab)
        np.testing.assert_array_equal(va.p_start.data, vb.p_start.data)
        np.testing.assert_array_equal(va.p_end.data, vb.p_end.data)

        qoff = make_model(vocab, k=2, use_question_history=False)
        va = qoff.forward_window(ctx_full, WINDOW, vocab)
        qoff.cmc_cfg.use_question_history = True
        vb = qoff.forward_window(
            ctx_for(2, q_hist=[None, None], a_hist=["dog", "elk"]), WINDOW, vocab
        )
        np.testing.assert_array_equal(va.p_start.data, vb.p_start.data)


class TestFullPipelineGradient:
    def test_tiny_config_gradcheck(self):
        res = full_pipeline_check(seed=11, n_coords=25)
        assert res.passed, res.line()

    def test_loss_deterministic_across_runs(self):
        def run():
            model, vocab, ctx, window = tiny_setup(seed=3)
            out = model.forward_window(ctx, window, vocab)
            loss, _, _ = model.batch_loss([(out, 0, 2, AnswerType.NO)], True)
            return loss.item()

        assert run() == run()
