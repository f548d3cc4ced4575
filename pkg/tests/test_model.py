import math

import numpy as np
import pytest

from helpers import TOY_TASKS, toy_bundle, toy_images
from labelgen.data import TaskSpec, register_default_layout
from labelgen.model import (
    ConfigError,
    DecoderConfig,
    ExtractorConfig,
    classify_head,
    decode_step,
    extract_features,
    forward_from_prefix,
    forward_teacher_forced,
    init_weights,
    project,
)
from labelgen.model.complexity import (
    conv_layer,
    count_complexity,
    extractor_layers,
    linear_layer,
    model_layers,
    large_scale_configs,
    total_flops,
)
from labelgen.numerics import ShapeError, Tensor, grad_check, no_grad
from labelgen.tokenizer import build_vocabulary, encode_batch
from labelgen.training import loss_generative

REG = register_default_layout()


def _ln(x, g, b, eps=1e-6):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / math.sqrt(var + eps) * g + b


def _gelu(x):
    return np.array([0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x])


class TestInit:
    def test_same_seed_bit_identical(self):
        a = toy_bundle(randomize=False, dtype=np.float32)
        b = toy_bundle(randomize=False, dtype=np.float32)
        assert a.params.keys() == b.params.keys()
        for k in a.params:
            assert a.params[k].data.tobytes() == b.params[k].data.tobytes()

    def test_init_statistics(self):
        b = toy_bundle(randomize=False, d_model=64, heads=4)
        w = b.params["decoder.blocks.0.mlp.fc1.weight"].data
        assert abs(w.std() - 0.02 * 0.88) < 0.002  # truncated at 2 sigma
        assert np.abs(w).max() <= 0.04
        assert np.all(b.params["decoder.blocks.0.ln1.gain"].data == 1)
        assert np.all(b.params["decoder.blocks.0.ln1.shift"].data == 0)
        assert np.all(b.params["projector.fc1.bias"].data == 0)

    def test_etag_has_no_heads(self):
        b = toy_bundle()
        assert not any(k.startswith("heads.") for k in b.params)
        ta = toy_bundle("E_TA")
        assert {k for k in ta.params if k.startswith("heads.")} == {
            "heads.grading.weight", "heads.grading.bias", "heads.typing.weight", "heads.typing.bias"}
        assert not any(k.startswith(("decoder.", "projector.")) for k in ta.params)

    def test_hand_summed_parameter_count(self):
        task = TaskSpec("t", tuple(f"w{i}" for i in range(17)), False)
        vocab = build_vocabulary(task.labels)
        assert len(vocab) == 20
        b = init_weights(ExtractorConfig((1,), (8,), 3, 4), DecoderConfig(1, 2, 8, 20, 7), [task], "E_TAG", 0,
                         vocab, 3)
        extractor = (8 * 3 * 16 + 8) + 16 + (8 * 9 + 8) + 16 + (32 * 8 + 32) + (8 * 32 + 8) + 16
        projector = 3 * (8 * 8 + 8)
        embeddings = 20 * 8 + 7 * 8
        block = 16 + (24 * 8 + 24) + (8 * 8 + 8) + 16 + (32 * 8 + 32) + (8 * 32 + 8)
        head = 16 + 20 * 8
        assert b.parameter_count() == extractor + projector + embeddings + block + head == 2552
        assert count_complexity(b, (16, 16)).parameter_count == 2552

    @pytest.mark.parametrize("bad", [
        dict(ext=ExtractorConfig((1, 2), (8,))),
        dict(ext=ExtractorConfig((1,), (8,), kernel_size=4)),
        dict(dec=DecoderConfig(1, 3, 8, 10, 5)),
        dict(dec=DecoderConfig(1, 2, 8, 11, 5)),
        dict(dec=DecoderConfig(1, 2, 8, 10, 3)),
    ])
    def test_invalid_configs(self, bad):
        vocab = build_vocabulary([l for t in TOY_TASKS for l in t.labels])
        ext = bad.get("ext", ExtractorConfig((1,), (8,), 3))
        dec = bad.get("dec", DecoderConfig(1, 2, 8, 10, 5))
        with pytest.raises(ConfigError):
            init_weights(ext, dec, TOY_TASKS, "E_TAG", 0, vocab, 5)

    def test_ets_single_task(self):
        with pytest.raises(ConfigError):
            init_weights(ExtractorConfig((1,), (8,)), None, TOY_TASKS, "E_TS", 0)


class TestExtractor:
    def test_shapes(self):
        b = toy_bundle("E_TA", depths=(1, 1), widths=(8, 12))
        for size in (16, 20, 33):
            assert extract_features(b, toy_images(3, size)).shape == (3, 12)

    def test_identical_images_identical_rows(self):
        b = toy_bundle()
        img = toy_images(1)
        f = extract_features(b, np.concatenate([img, img])).data
        np.testing.assert_array_equal(f[0], f[1])

    def test_zero_image_finite(self):
        b = toy_bundle()
        assert np.all(np.isfinite(extract_features(b, np.zeros((1, 3, 16, 16))).data))

    def test_too_small(self):
        b = toy_bundle()
        with pytest.raises(ShapeError):
            extract_features(b, np.zeros((1, 3, 3, 3)))

    def test_matches_direct_numpy_pipeline(self):
        b = toy_bundle("E_TA", kernel_size=3)
        p = {k: v.data for k, v in b.params.items()}
        x = toy_images(1)[0]
        # stem: non-overlapping 4x4 patches
        h = np.einsum("chpwq,ocpq->hwo", x.reshape(3, 4, 4, 4, 4), p["extractor.stem.weight"])
        h = h + p["extractor.stem.bias"]
        h = np.stack([[_ln(v, p["extractor.stem_norm.gain"], p["extractor.stem_norm.shift"]) for v in row]
                      for row in h])
        bp = "extractor.stages.0.blocks.0"
        hp = np.pad(h, ((1, 1), (1, 1), (0, 0)))
        dw = np.zeros_like(h)
        for i in range(4):
            for j in range(4):
                dw[i, j] = (hp[i:i + 3, j:j + 3] * p[f"{bp}.dw.weight"][:, 0].transpose(1, 2, 0)).sum((0, 1))
        dw += p[f"{bp}.dw.bias"]
        out = np.zeros_like(h)
        for i in range(4):
            for j in range(4):
                v = _ln(dw[i, j], p[f"{bp}.norm.gain"], p[f"{bp}.norm.shift"])
                v = _gelu(p[f"{bp}.fc1.weight"] @ v + p[f"{bp}.fc1.bias"])
                out[i, j] = h[i, j] + p[f"{bp}.fc2.weight"] @ v + p[f"{bp}.fc2.bias"]
        feat = _ln(out.mean((0, 1)), p["extractor.head_norm.gain"], p["extractor.head_norm.shift"])
        np.testing.assert_allclose(extract_features(b, x[None]).data[0], feat, rtol=1e-10, atol=1e-12)


class TestProject:
    def test_shape(self):
        b = toy_bundle(n_prefix=2)
        assert project(b, Tensor(np.ones((3, 8)))).shape == (3, 2, 8)

    def test_zero_in_zero_out(self):
        b = toy_bundle(randomize=False)
        np.testing.assert_array_equal(project(b, Tensor(np.zeros((2, 8)))).data, 0.0)

    def test_three_linear_composition(self):
        b = toy_bundle()
        p = {k: v.data for k, v in b.params.items()}
        f = np.random.default_rng(1).standard_normal((2, 8))
        h = f @ p["projector.fc1.weight"].T + p["projector.fc1.bias"]
        h = np.stack([_gelu(r) for r in h]) @ p["projector.fc2.weight"].T + p["projector.fc2.bias"]
        h = np.stack([_gelu(r) for r in h]) @ p["projector.fc3.weight"].T + p["projector.fc3.bias"]
        np.testing.assert_allclose(project(b, Tensor(f)).data[:, 0], h, rtol=1e-12)


def _targets(bundle, labels):
    return encode_batch(labels, bundle.vocab, bundle.seq_len)


class TestDecoder:
    def test_logit_shape(self):
        b = toy_bundle()
        tok = _targets(b, ["benign", "low grade cancer"])
        assert forward_teacher_forced(b, toy_images(2), tok).shape == (2, b.seq_len, len(b.vocab))

    def test_token_out_of_range(self):
        b = toy_bundle()
        tok = _targets(b, ["benign", "fat"])
        tok[0, 1] = 99
        with pytest.raises(IndexError):
            forward_teacher_forced(b, toy_images(2), tok)

    def test_causality(self):
        b = toy_bundle(layers=2)
        images = toy_images(1)
        tok = _targets(b, ["high grade cancer"])
        base = forward_teacher_forced(b, images, tok).data
        for m in range(1, b.seq_len - 1):
            changed = tok.copy()
            changed[0, m] = (changed[0, m] + 1) % len(b.vocab)
            out = forward_teacher_forced(b, images, changed).data
            assert np.max(np.abs(out[0, :m + 1] - base[0, :m + 1])) < 1e-6
            assert np.max(np.abs(out[0, m + 1:] - base[0, m + 1:])) > 1e-6

    def test_hand_unrolled_single_head(self):
        b = toy_bundle(d_model=4, heads=1, layers=1)
        p = {k: v.data for k, v in b.params.items()}
        prefix = np.random.default_rng(2).standard_normal((1, 1, 4))
        tok = _targets(b, ["low grade cancer"])
        got = forward_from_prefix(b, Tensor(prefix), tok).data[0]

        T = b.seq_len
        xs = [prefix[0, 0] + p["decoder.pos_emb"][0]]
        for j in range(T - 1):
            xs.append(p["decoder.tok_emb"][tok[0, j]] + p["decoder.pos_emb"][j + 1])
        W, c = p["decoder.blocks.0.attn.qkv.weight"], p["decoder.blocks.0.attn.qkv.bias"]
        qs, ks, vs = [], [], []
        for x in xs:
            a = _ln(x, p["decoder.blocks.0.ln1.gain"], p["decoder.blocks.0.ln1.shift"])
            qkv = W @ a + c
            qs.append(qkv[:4]), ks.append(qkv[4:8]), vs.append(qkv[8:])
        expected = []
        for i, x in enumerate(xs):
            scores = [float(qs[i] @ ks[j]) / 2.0 for j in range(i + 1)]
            top = max(scores)
            w = [math.exp(s - top) for s in scores]
            o = sum(wj * vs[j] for j, wj in enumerate(w)) / sum(w)
            x = x + p["decoder.blocks.0.attn.out.weight"] @ o + p["decoder.blocks.0.attn.out.bias"]
            m = _ln(x, p["decoder.blocks.0.ln2.gain"], p["decoder.blocks.0.ln2.shift"])
            m = _gelu(p["decoder.blocks.0.mlp.fc1.weight"] @ m + p["decoder.blocks.0.mlp.fc1.bias"])
            x = x + p["decoder.blocks.0.mlp.fc2.weight"] @ m + p["decoder.blocks.0.mlp.fc2.bias"]
            x = _ln(x, p["decoder.final_norm.gain"], p["decoder.final_norm.shift"])
            expected.append(p["decoder.lm_head.weight"] @ x)
        np.testing.assert_allclose(got, np.array(expected), rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("n_prefix", [1, 3])
    def test_decode_step_matches_teacher_forcing(self, n_prefix):
        b = toy_bundle(layers=2, n_prefix=n_prefix, dtype=np.float32)
        images = toy_images(2, dtype=np.float32)
        tok = _targets(b, ["high grade cancer", "muscle"])
        with no_grad():
            full = forward_teacher_forced(b, images, tok).data
            prefix = project(b, extract_features(b, images))
            for r in range(2):
                for j in range(1, b.seq_len):
                    step = decode_step(b, Tensor(prefix.data[r]), tok[r, 1:j]).data
                    np.testing.assert_allclose(step, full[r, j], atol=1e-5)
                batched = decode_step(b, prefix, tok[:, 1:3]).data
                np.testing.assert_allclose(batched, full[:, 3], atol=1e-5)

    def test_decode_step_empty_is_bos_only(self):
        b = toy_bundle()
        prefix = Tensor(np.random.default_rng(0).standard_normal((1, 8)))
        a = decode_step(b, prefix, []).data
        again = decode_step(b, prefix, []).data
        direct = forward_from_prefix(b, Tensor(prefix.data[None]), np.array([[1, 0]])).data[0, 1]
        np.testing.assert_array_equal(a, again)
        np.testing.assert_allclose(a, direct, rtol=1e-12)


class TestHeads:
    def test_width_and_bias(self):
        b = toy_bundle("E_TA", randomize=False)
        feats = Tensor(np.random.default_rng(0).standard_normal((4, 8)))
        assert classify_head(b, feats, "typing").shape == (4, 3)
        b.params["heads.grading.bias"].data[...] = [1.0, 2.0, 3.0]
        b.params["heads.grading.weight"].data[...] = 0.0
        np.testing.assert_array_equal(classify_head(b, feats, "grading").data, np.tile([1.0, 2.0, 3.0], (4, 1)))

    def test_matches_linear(self):
        b = toy_bundle("E_TA")
        f = np.random.default_rng(0).standard_normal((4, 8))
        W, c = b.params["heads.typing.weight"].data, b.params["heads.typing.bias"].data
        np.testing.assert_allclose(classify_head(b, Tensor(f), "typing").data, f @ W.T + c, rtol=1e-12)

    def test_generative_has_no_heads(self):
        with pytest.raises(ValueError, match="no heads in generative bundle"):
            classify_head(toy_bundle(), Tensor(np.zeros((1, 8))), "grading")


def test_end_to_end_gradient():
    b = toy_bundle(d_model=8, heads=2, layers=1, depths=(1,), widths=(8,))
    images = toy_images(2)
    tok = _targets(b, ["low grade cancer", "fat"])
    names = list(b.params)
    report = grad_check(lambda *ps: loss_generative(b, images, tok), [b.params[n] for n in names],
                        tol=1e-3, max_probes=12, seed=3)
    assert report.passed, report


class TestComplexity:
    def test_linear_stub(self):
        layer = linear_layer("fc", 4, 5)
        assert (layer.params, layer.flops) == (25, 45)

    def test_conv_stub(self):
        layer = conv_layer("c", 3, 8, 3, 10, 10)
        assert layer.params == 3 * 8 * 9 + 8
        assert layer.flops == 2 * 3 * 8 * 9 * 100 + 100 * 8

    def test_conv_flops_scale_with_area(self):
        cfg = ExtractorConfig((1, 1), (8, 16), 3, 4)
        small = sum(l.flops for l in extractor_layers(cfg, 32, 32) if l.kind in ("conv", "depthwise"))
        big = sum(l.flops for l in extractor_layers(cfg, 64, 64) if l.kind in ("conv", "depthwise"))
        assert big == 4 * small

    def test_seed_invariance(self):
        a = count_complexity(toy_bundle(seed=0), (16, 16))
        b = count_complexity(toy_bundle(seed=9), (16, 16))
        assert (a.parameter_count, a.flops_per_image) == (b.parameter_count, b.flops_per_image)

    @pytest.mark.parametrize("setting", ["E_TA", "E_TAG"])
    def test_matches_allocated(self, setting):
        b = toy_bundle(setting, depths=(1, 2), widths=(8, 16))
        assert count_complexity(b, (32, 32)).parameter_count == b.parameter_count()

    def test_heads_count_largest(self):
        b = toy_bundle("E_TA")
        layers = model_layers(b.extractor, None, b.tasks, "E_TA", (16, 16))
        body = sum(l.flops for l in layers if not l.name.startswith("heads."))
        assert total_flops(layers) == body + (2 * 8 * 3 + 3)

    def test_large_scale_order_of_magnitude(self):
        ext, dec = large_scale_configs()
        n = sum(l.params for l in model_layers(ext, dec, REG.tasks, "E_TAG", (224, 224), 6))
        assert 1e8 <= n < 1e9
