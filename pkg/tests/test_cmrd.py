import numpy as np
import pytest

from comer import autodiff as ad
from comer.autodiff import Tensor
from comer.cmrd import attention, cmrd_step, decode_sequence, initial_lstm_state
from comer.embeddings import (CLS, SEP, EmbeddingError, TokenUnit,
                              build_pseudo_table, key_of)
from comer.encoder import EncodedMemory, encode, init_decoder_state
from comer.model import ModelConfig, init_params, param_shapes

RNG = np.random.default_rng(23)


def setup(d_m=6, d_e=4, seed=0, **cfg_kw):
    cfg_kw.setdefault("dropout", 0.0)
    cfg = ModelConfig(d_m=d_m, d_e=d_e, **cfg_kw)
    params = init_params(param_shapes(cfg), seed=seed)
    table = build_pseudo_table(
        ["thai", "north", "want", "food", "cheap"],
        [TokenUnit("restaurant", "domain"), TokenUnit("food", "slot"),
         TokenUnit("area", "slot")],
        d_e, seed=1)
    words = lambda *ss: [TokenUnit(s, "word") for s in ss]
    memories = {
        "belief": encode([], table, params, d_m, role="belief"),
        "sys": encode(words("want"), table, params, d_m, role="system"),
        "usr": encode(words("thai", "food"), table, params, d_m, role="user"),
    }
    q0 = init_decoder_state(memories["belief"], memories["sys"], memories["usr"])
    return cfg, params, table, memories, q0


class TestAttention:
    def _memory(self, H):
        t = Tensor(np.asarray(H, dtype=float), requires_grad=True)
        return EncodedMemory(H=t, role="user", final_forward=t, final_backward=t)

    def test_hand_oracle(self):
        d = 3
        params = {
            "attn.W1": Tensor(RNG.normal(size=(d, d)), requires_grad=True),
            "attn.b1": Tensor(RNG.normal(size=d), requires_grad=True),
            "attn.W2": Tensor(RNG.normal(size=(d, d)), requires_grad=True),
            "attn.b2": Tensor(RNG.normal(size=d), requires_grad=True),
        }
        H = RNG.normal(size=(4, d))
        h = Tensor(RNG.normal(size=d))
        out, w = attention(h, self._memory(H), params)

        a = params["attn.W1"].data @ h.data + params["attn.b1"].data
        scores = H @ a
        e = np.exp(scores - scores.max())
        c = e / e.sum()
        read = H.T @ c
        expect = params["attn.W2"].data @ read + params["attn.b2"].data
        assert np.allclose(out.data, expect, atol=1e-12)
        assert np.allclose(w, c, atol=1e-12)

    def test_weights_normalized(self):
        cfg, params, table, memories, q0 = setup()
        _, w = attention(Tensor(RNG.normal(size=cfg.d_m)), memories["usr"], params)
        assert w.shape == (memories["usr"].length,)
        assert w.sum() == pytest.approx(1.0)
        assert (w > 0).all()

    def test_width_mismatch(self):
        cfg, params, table, memories, q0 = setup()
        with pytest.raises(ad.ShapeError):
            attention(Tensor(np.zeros(cfg.d_m + 1)), memories["usr"], params)

    def test_single_row_memory_reads_that_row(self):
        d = 3
        params = {
            "attn.W1": Tensor(RNG.normal(size=(d, d))),
            "attn.b1": Tensor(RNG.normal(size=d)),
            "attn.W2": Tensor(np.eye(d)),
            "attn.b2": Tensor(np.zeros(d)),
        }
        row = RNG.normal(size=(1, d))
        out, w = attention(Tensor(RNG.normal(size=d)), self._memory(row), params)
        assert np.allclose(w, [1.0])
        assert np.allclose(out.data, row[0])


class TestCmrdStep:
    def test_forward_matches_reference(self):
        cfg, params, table, memories, q0 = setup()
        cond = Tensor(RNG.normal(size=cfg.d_m))
        step = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0), cond,
                         memories, table, params, cfg)

        def p(name):
            return params[name].data

        def ref_lstm(W, b, x, h, c):
            hid = h.shape[0]
            z = W @ np.concatenate([x, h]) + b
            sig = lambda a: 1.0 / (1.0 + np.exp(-a))
            i, f = sig(z[:hid]), sig(z[hid:2 * hid])
            g, o = np.tanh(z[2 * hid:3 * hid]), sig(z[3 * hid:])
            c2 = f * c + i * g
            return o * np.tanh(c2), c2

        def ref_attn(h, H):
            a = p("attn.W1") @ h + p("attn.b1")
            s = H @ a
            e = np.exp(s - s.max())
            c = e / e.sum()
            return p("attn.W2") @ (H.T @ c) + p("attn.b2")

        x = table.vector(key_of(CLS, "control"))
        zeros = np.zeros(cfg.d_m)
        h0, _ = ref_lstm(p("dec.l0.W"), p("dec.l0.b"), x, q0.data, zeros)
        h1, _ = ref_lstm(p("dec.l1.W"), p("dec.l1.b"), h0, q0.data, zeros)
        h = h1 + cond.data
        chain = [h]
        for role in cfg.attention_order:
            chain.append(chain[-1] + ref_attn(chain[-1], memories[role].H.data))
        z = np.concatenate(chain)
        for i in (1, 2, 3, 4):
            z = np.maximum(0.0, p(f"mlp.W{i}") @ z + p(f"mlp.b{i}"))
        logits = table.matrix() @ (p("out.Wk") @ z + p("out.bk"))
        assert np.allclose(step.logits.data, logits, atol=1e-10)
        assert step.token_index == int(np.argmax(logits))

    def test_step_is_deterministic(self):
        cfg, params, table, memories, q0 = setup()
        state = initial_lstm_state(q0)
        cond = Tensor(RNG.normal(size=cfg.d_m))
        a = cmrd_step(key_of(CLS, "control"), state, cond, memories, table, params, cfg)
        b = cmrd_step(key_of(CLS, "control"), state, cond, memories, table, params, cfg)
        assert a.token_index == b.token_index
        assert np.array_equal(a.logits.data, b.logits.data)

    def test_logits_cover_whole_table(self):
        cfg, params, table, memories, q0 = setup()
        step = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                         Tensor(np.zeros(cfg.d_m)), memories, table, params, cfg)
        assert step.logits.data.shape == (len(table),)

    def test_condition_changes_output(self):
        cfg, params, table, memories, q0 = setup()
        state = initial_lstm_state(q0)
        a = cmrd_step(key_of(CLS, "control"), state, Tensor(np.zeros(cfg.d_m)),
                      memories, table, params, cfg)
        b = cmrd_step(key_of(CLS, "control"), state, Tensor(np.full(cfg.d_m, 2.0)),
                      memories, table, params, cfg)
        assert not np.allclose(a.logits.data, b.logits.data)

    def test_unknown_input_token(self):
        cfg, params, table, memories, q0 = setup()
        with pytest.raises(EmbeddingError):
            cmrd_step("word:nosuch", initial_lstm_state(q0), Tensor(np.zeros(cfg.d_m)),
                      memories, table, params, cfg)

    def test_attention_weights_per_role(self):
        cfg, params, table, memories, q0 = setup()
        step = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                         Tensor(np.zeros(cfg.d_m)), memories, table, params, cfg)
        assert set(step.attention_weights) == {"belief", "sys", "usr"}
        for role, w in step.attention_weights.items():
            assert len(w) == memories[role].length

    def test_argmax_lowest_index_tie_break(self):
        # duplicate embedding rows produce identical logits; argmax must take
        # the first occurrence
        x = np.array([1.0, 3.0, 3.0, 0.5])
        assert int(np.argmax(x)) == 1


def loss_of(cfg, params, table, memories, q0, target_key="word:thai"):
    step = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                     Tensor(np.zeros(cfg.d_m)), memories, table, params, cfg,
                     mode="train")
    return ad.cross_entropy(step.logits, table.index(target_key))


class TestGradientBlocking:
    def _reference_grads(self, cfg, params, table, memories, q0, target_key):
        """Rebuild the step with the three supplementary taps spliced in as
        constants; gradients from this graph are the frozen-branch truth."""
        e_x = Tensor(table.vector(key_of(CLS, "control")))
        from comer.encoder import lstm_cell
        (h0p, c0p), (h1p, c1p) = initial_lstm_state(q0)
        h_l0, _ = lstm_cell(params["dec.l0.W"], params["dec.l0.b"], e_x, h0p, c0p)
        h_l1, _ = lstm_cell(params["dec.l1.W"], params["dec.l1.b"], h_l0, h1p, c1p)
        h = ad.add(h_l1, Tensor(np.zeros(cfg.d_m)))
        chain = [h]
        for role in cfg.attention_order:
            read, _ = attention(chain[-1], memories[role], params)
            chain.append(ad.add(chain[-1], read))
        taps = [Tensor(t.data.copy()) for t in chain[:-1]]  # frozen constants
        z = ad.concat([*taps, chain[-1]])
        for i in (1, 2, 3, 4):
            z = ad.relu(ad.linear(params[f"mlp.W{i}"], params[f"mlp.b{i}"], z))
        h_o = ad.linear(params["out.Wk"], params["out.bk"], z)
        logits = ad.matmul(Tensor(table.matrix()), h_o)
        loss = ad.cross_entropy(logits, table.index(target_key))
        for p in params.values():
            p.grad = None
        loss.backward()
        return {k: (p.grad.copy() if p.grad is not None else None)
                for k, p in params.items()}

    def test_blocked_gradients_equal_frozen_branch_reference(self):
        # two independent graphs from the same seeds: a backward pass leaves
        # gradients on shared intermediates, so the runs must not share nodes
        ref = self._reference_grads(*setup(block_grad=True), "word:thai")
        cfg, params, table, memories, q0 = setup(block_grad=True)
        loss_of(cfg, params, table, memories, q0).backward()
        for k, p in params.items():
            if ref[k] is None:
                assert p.grad is None or np.allclose(p.grad, 0.0), k
            else:
                assert np.allclose(p.grad, ref[k], atol=1e-10), k

    def test_unblocked_control_differs(self):
        ref = self._reference_grads(*setup(block_grad=False), "word:thai")
        cfg, params, table, memories, q0 = setup(block_grad=False)
        loss_of(cfg, params, table, memories, q0).backward()
        diffs = [not np.allclose(params[k].grad, ref[k], atol=1e-10)
                 for k in params if ref[k] is not None and params[k].grad is not None]
        assert any(diffs)


class TestDecodeSequence:
    def test_forced_shapes(self):
        cfg, params, table, memories, q0 = setup()
        forced = ["domain:restaurant"]
        res = decode_sequence(Tensor(np.zeros(cfg.d_m)), memories, table, q0,
                              params, cfg, max_len=8, forced=forced, mode="train")
        assert res.steps == 2                      # gold token + terminator
        assert len(res.losses) == 2
        assert len(res.hidden) == 1
        assert [t.key for t in res.tokens] == forced

    def test_forced_multi_token(self):
        cfg, params, table, memories, q0 = setup()
        forced = ["slot:food", "slot:area"]
        res = decode_sequence(Tensor(np.zeros(cfg.d_m)), memories, table, q0,
                              params, cfg, max_len=8, forced=forced, mode="train")
        assert res.steps == 3 and len(res.losses) == 3 and len(res.hidden) == 2

    def test_free_running_respects_max_len(self):
        cfg, params, table, memories, q0 = setup()
        res = decode_sequence(Tensor(np.zeros(cfg.d_m)), memories, table, q0,
                              params, cfg, max_len=3)
        assert len(res.tokens) <= 3
        assert all(t.surface != SEP for t in res.tokens)

    def test_free_running_stops_at_terminator(self):
        # force the terminator to win every step by biasing its embedding row
        cfg, params, table, memories, q0 = setup()
        boosted = build_pseudo_table([], [], cfg.d_e, seed=1)
        table2 = type(table)(cfg.d_e)
        for i, k in enumerate(table.keys):
            v = table.vector(k)
            if k == key_of(SEP, "control"):
                v = v * 1000.0
            table2.add(k, v, "vocab" if table.token_at(i).kind in ("word", "control") else "unit")
        res = decode_sequence(Tensor(np.zeros(cfg.d_m)), memories, table2, q0,
                              params, cfg, max_len=8)
        res2 = decode_sequence(Tensor(np.zeros(cfg.d_m)), memories, table2, q0,
                              params, cfg, max_len=8)
        assert res.steps == res2.steps  # deterministic
        if res.tokens == []:
            assert res.steps == 1       # stopped immediately on the terminator

    def test_attention_dumps_one_per_step(self):
        cfg, params, table, memories, q0 = setup()
        res = decode_sequence(Tensor(np.zeros(cfg.d_m)), memories, table, q0,
                              params, cfg, max_len=4, level="domain")
        assert len(res.attention_dumps) == res.steps
        for dump in res.attention_dumps:
            assert dump["level"] == "domain"
            assert sum(dump["weights_usr"]) == pytest.approx(1.0)

    def test_losses_are_connected_to_parameters(self):
        cfg, params, table, memories, q0 = setup()
        res = decode_sequence(Tensor(np.zeros(cfg.d_m)), memories, table, q0,
                              params, cfg, max_len=8, forced=["slot:food"], mode="train")
        total = res.losses[0]
        for other in res.losses[1:]:
            total = ad.add(total, other)
        total.backward()
        assert params["out.Wk"].grad is not None
        assert params["dec.l0.W"].grad is not None
        assert params["enc.l0.f.W"].grad is not None  # through the memories

    def test_bad_max_len(self):
        cfg, params, table, memories, q0 = setup()
        with pytest.raises(ValueError):
            decode_sequence(Tensor(np.zeros(cfg.d_m)), memories, table, q0,
                            params, cfg, max_len=0)


class TestParameterIndependenceFromVocabulary:
    def test_same_params_serve_any_table_size(self):
        cfg, params, table, memories, q0 = setup()
        big_words = [f"extra{i}" for i in range(200)]
        big = build_pseudo_table(
            ["thai", "north", "want", "food", "cheap", *big_words],
            [TokenUnit("restaurant", "domain"), TokenUnit("food", "slot"),
             TokenUnit("area", "slot")],
            cfg.d_e, seed=1)
        step = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                         Tensor(np.zeros(cfg.d_m)), memories, big, params, cfg)
        assert step.logits.data.shape == (len(big),)

    def test_shared_logits_for_shared_rows(self):
        # a token present in two tables with the same vector gets the same logit
        cfg, params, table, memories, q0 = setup()
        step = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                         Tensor(np.zeros(cfg.d_m)), memories, table, params, cfg)
        i = table.index("word:thai")
        big = build_pseudo_table(
            ["thai", "north", "want", "food", "cheap", "zebra"],
            [TokenUnit("restaurant", "domain"), TokenUnit("food", "slot"),
             TokenUnit("area", "slot")],
            cfg.d_e, seed=1)
        step2 = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                          Tensor(np.zeros(cfg.d_m)), memories, big, params, cfg)
        assert step2.logits.data[big.index("word:thai")] == pytest.approx(
            step.logits.data[i], abs=1e-12)


class TestDropoutPlacement:
    def test_default_position_before_projection(self):
        cfg, params, table, memories, q0 = setup(dropout=0.0)
        cfg_drop = ModelConfig(d_m=cfg.d_m, d_e=cfg.d_e, dropout=0.9)
        rng = np.random.default_rng(0)
        step = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                         Tensor(np.zeros(cfg.d_m)), memories, table, params,
                         cfg_drop, mode="train", rng=rng)
        base = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                         Tensor(np.zeros(cfg.d_m)), memories, table, params,
                         cfg_drop, mode="eval")
        assert not np.allclose(step.logits.data, base.logits.data)

    def test_eval_mode_ignores_dropout(self):
        cfg, params, table, memories, q0 = setup(dropout=0.9)
        a = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                      Tensor(np.zeros(cfg.d_m)), memories, table, params, cfg)
        b = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                      Tensor(np.zeros(cfg.d_m)), memories, table, params, cfg)
        assert np.array_equal(a.logits.data, b.logits.data)

    def test_moved_position_changes_where_noise_lands(self):
        cfg, params, table, memories, q0 = setup()
        moved = ModelConfig(d_m=cfg.d_m, d_e=cfg.d_e, dropout=0.5, move_dropout=True)
        rng = np.random.default_rng(3)
        step = cmrd_step(key_of(CLS, "control"), initial_lstm_state(q0),
                         Tensor(np.zeros(cfg.d_m)), memories, table, params,
                         moved, mode="train", rng=rng)
        # dropout after the projection zeroes embedding-space coordinates, so
        # h_s (pre-projection) carries no zeros from dropout
        assert np.count_nonzero(step.h_s.data == 0.0) <= cfg.d_m  # relu zeros only
