import itertools

import numpy as np
import pytest

from fourier_mts import autodiff as ad
from fourier_mts.exceptions import ConfigurationError, DataError, DimensionError
from fourier_mts.model import (
    SEARCH_SPACE,
    ModelConfig,
    ModuleKind,
    build_model,
    ffn_forward,
    gap_forward,
    load_checkpoint,
    mha_forward,
    module_param_contribution,
    param_count,
    save_checkpoint,
)


def small_cfg(**kw):
    base = dict(input_dims=3, seq_len=8, num_classes=2, embed_dim=8, num_heads=2,
                ffn_hidden_dim=16, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def mha_params(rng, d, hd):
    p = {}
    for w in "qkv":
        p[f"w{w}"] = ad.Tensor(rng.normal(size=(d, hd)))
        p[f"b{w}"] = ad.Tensor(rng.normal(size=hd))
    p["wo"] = ad.Tensor(rng.normal(size=(hd, d)))
    p["bo"] = ad.Tensor(rng.normal(size=d))
    return p


# parameter accounting ---------------------------------------------------------------


def test_hand_counted_small_config():
    # embed 8*3*3+8 = 80, embed BN 16, MHA 3*(64+8)+64+8 = 288 (+16 BN),
    # FFN 8*16+16+16*8+8 = 280 (+16 BN), classifier 8*2+2 = 18
    cfg = small_cfg()
    assert param_count(cfg) == 80 + 16 + 288 + 16 + 280 + 16 + 18
    assert build_model(cfg).n_params() == param_count(cfg)


def test_only_classifier_config():
    cfg = ModelConfig(input_dims=1, seq_len=4, num_classes=2, embed_dim=8).only([])
    assert param_count(cfg) == 18
    assert build_model(cfg).n_params() == 18


@pytest.mark.parametrize("kinds", [
    k for r in range(0, 9, 3) for k in itertools.combinations(list(ModuleKind), r)
])
def test_registry_matches_analytic_count(kinds):
    cfg = small_cfg().without(*kinds)
    assert build_model(cfg).n_params() == param_count(cfg)


def test_contributions_sum_to_total():
    for layers in (1, 2, 3):
        cfg = small_cfg(layers_mha=layers, layers_ffn=layers, num_heads=4)
        body = sum(module_param_contribution(cfg, k) for k in
                   (ModuleKind.EMBED, ModuleKind.MHA, ModuleKind.FFN))
        assert param_count(cfg) == body + 2 * cfg.d_model + cfg.d_model * 2 + 2


def test_removing_a_module_subtracts_its_contribution():
    cfg = small_cfg()
    for kind in (ModuleKind.EMBED, ModuleKind.MHA, ModuleKind.FFN):
        assert param_count(cfg) - param_count(cfg.without(kind)) == module_param_contribution(cfg, kind)
    for kind in (ModuleKind.FFT, ModuleKind.IFFT, ModuleKind.GAP, ModuleKind.ACT):
        assert module_param_contribution(cfg, kind) == 0
        assert param_count(cfg.without(kind)) == param_count(cfg)
    assert param_count(cfg) - param_count(cfg.without(ModuleKind.BN)) == \
        module_param_contribution(cfg, ModuleKind.BN)


# config validation ---------------------------------------------------------------


def test_search_space_constants():
    assert SEARCH_SPACE["num_heads"] == (4, 8, 16)
    assert SEARCH_SPACE["dropout"] == (0.1, 0.2, 0.3)
    assert SEARCH_SPACE["batch_size"] == (8, 16, 32)
    assert set(SEARCH_SPACE["learning_rate"]) == {1e-3, 5e-3, 1e-4, 5e-4, 1e-5, 5e-5}
    assert SEARCH_SPACE["layers_mha"] == (0, 1, 2, 3, 4)


@pytest.mark.parametrize("kw", [
    dict(embed_dim=10, num_heads=4),
    dict(layers_fft=5),
    dict(num_classes=1),
    dict(dropout=1.0),
    dict(spectral_norm="forward"),
    dict(embed_kernel=0),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigurationError):
        small_cfg(**kw).validate()


def test_paper_protocol_bounds():
    small_cfg(num_heads=4, dropout=0.1).validate(paper_protocol=True)
    with pytest.raises(ConfigurationError, match=r"\[4, 8, 16\]"):
        small_cfg(num_heads=2, embed_dim=8).validate(paper_protocol=True)
    with pytest.raises(ConfigurationError):
        small_cfg(num_heads=4, dropout=0.15).validate(paper_protocol=True)


def test_config_dict_round_trip():
    cfg = small_cfg(layers_fft=2, include_gap=False)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# building blocks ------------------------------------------------------------------


def test_attention_rows_are_distributions(rng):
    x = rng.normal(size=(2, 6, 8))
    attn = []
    mha_forward(x, mha_params(rng, 8, 8), 2, attn_out=attn)
    (a,) = attn
    assert a.shape == (2, 2, 6, 6)
    assert np.all(a >= 0)
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_is_permutation_equivariant(rng):
    x = rng.normal(size=(1, 7, 8))
    params = mha_params(rng, 8, 8)
    perm = rng.permutation(7)
    out = mha_forward(x, params, 4).data
    out_p = mha_forward(x[:, perm], params, 4).data
    np.testing.assert_allclose(out_p, out[:, perm], atol=1e-12)


def test_mha_against_explicit_per_head_loop(rng):
    x = rng.normal(size=(1, 5, 8))
    p = mha_params(rng, 8, 8)
    h, dk = 2, 4
    got = mha_forward(x, p, h).data[0]
    xs = x[0]
    heads = []
    for i in range(h):
        sl = slice(i * dk, (i + 1) * dk)
        q = xs @ p["wq"].data[:, sl] + p["bq"].data[sl]
        k = xs @ p["wk"].data[:, sl] + p["bk"].data[sl]
        v = xs @ p["wv"].data[:, sl] + p["bv"].data[sl]
        s = q @ k.T / np.sqrt(dk)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        heads.append((s / s.sum(axis=1, keepdims=True)) @ v)
    want = np.concatenate(heads, axis=1) @ p["wo"].data + p["bo"].data
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_mha_rejects_bad_shapes(rng):
    with pytest.raises(DimensionError):
        mha_forward(rng.normal(size=(2, 6)), mha_params(rng, 8, 8), 2)
    with pytest.raises(DimensionError):
        mha_forward(rng.normal(size=(1, 6, 4)), mha_params(rng, 8, 8), 2)


def test_ffn_identity_convs_compose_to_gelu(rng):
    d = 4
    p = {
        "w1": ad.Tensor(np.eye(d)[:, :, None]), "b1": ad.Tensor(np.zeros(d)),
        "w2": ad.Tensor(np.eye(d)[:, :, None]), "b2": ad.Tensor(np.zeros(d)),
    }
    x = np.abs(rng.normal(size=(2, 5, d)))
    np.testing.assert_allclose(ffn_forward(x, p).data, ad.gelu(x).data, atol=1e-12)
    assert ffn_forward(rng.normal(size=(2, 50, d)), p).shape == (2, 50, d)


def test_gap_examples():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    assert gap_forward(x).data.tolist() == [[2.0, 3.0]]
    const = np.full((1, 9, 3), 2.5)
    np.testing.assert_allclose(gap_forward(const).data, [[2.5, 2.5, 2.5]])


# model ------------------------------------------------------------------------------


def test_forward_shapes_and_determinism(rng):
    cfg = small_cfg(dropout=0.1)
    x = rng.normal(size=(4, 8, 3))
    a, b = build_model(cfg, seed=3), build_model(cfg, seed=3)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert a.forward(x, training=False).shape == (4, 2)
    np.testing.assert_array_equal(a.forward(x, training=False).data, a.forward(x, training=False).data)
    np.testing.assert_allclose(a.predict_proba(x).sum(axis=1), 1.0)
    with pytest.raises(DimensionError):
        a.forward(rng.normal(size=(4, 7, 3)))


def test_different_seeds_give_different_weights():
    a, b = build_model(small_cfg(), 0), build_model(small_cfg(), 1)
    assert not np.array_equal(a.params["embed.weight"].data, b.params["embed.weight"].data)


@pytest.mark.parametrize("kind, op", [
    (ModuleKind.FFT, "fft"), (ModuleKind.IFFT, "ifft"), (ModuleKind.MHA, "mha"),
    (ModuleKind.FFN, "ffn"), (ModuleKind.GAP, "gap"), (ModuleKind.BN, "bn"),
    (ModuleKind.ACT, "act"), (ModuleKind.EMBED, "embed"),
])
def test_removal_drops_the_stage(rng, kind, op):
    full = build_model(small_cfg())
    reduced = build_model(small_cfg().without(kind))
    assert op in [s for s, _ in full.steps]
    assert op not in [s for s, _ in reduced.steps]
    assert kind not in reduced.cfg.modules_present()
    assert reduced.forward(rng.normal(size=(2, 8, 3)), training=False).shape == (2, 2)


def test_without_gap_reads_last_step_and_without_embed_lifts(rng):
    m = build_model(small_cfg().without(ModuleKind.GAP))
    assert m.steps[-1] == ("last", None)
    m = build_model(small_cfg().without(ModuleKind.EMBED))
    assert "lift.projection" in m.buffers
    assert not any(k.startswith("embed.") and "bn" not in k for k in m.params)


def test_layer_counts_repeat_blocks():
    m = build_model(small_cfg(layers_fft=3, layers_mha=2, layers_ifft=2, layers_ffn=4))
    ops = [s for s, _ in m.steps]
    assert ops.count("fft") == 3 and ops.count("mha") == 2
    assert ops.count("ifft") == 2 and ops.count("ffn") == 4


def test_full_model_gradient_check(rng):
    cfg = small_cfg(embed_dim=8, num_heads=2, dropout=0.0)
    model = build_model(cfg, seed=0)
    x = rng.normal(size=(2, 8, 3))
    y = np.array([0, 1])

    def loss_value():
        logits = model.forward(x, training=True)
        return -ad.mean(ad.log_softmax(logits, axis=-1)[np.arange(2), y])

    with ad.GradTape() as tape:
        loss = loss_value()
    tape.backward(loss)
    for name, p in model.params.items():
        analytic = p.grad
        flat = p.data.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 6)):
            orig = flat[i]
            flat[i] = orig + 1e-6
            hi = loss_value().item()
            flat[i] = orig - 1e-6
            lo = loss_value().item()
            flat[i] = orig
            num = (hi - lo) / 2e-6
            assert abs(analytic.reshape(-1)[i] - num) <= 1e-4 * abs(num) + 1e-7, name


def test_checkpoint_round_trip(tmp_path, rng):
    model = build_model(small_cfg(layers_mha=2), seed=5)
    x = rng.normal(size=(3, 8, 3))
    model.forward(x, training=True)  # move BN running stats off their defaults
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.cfg == model.cfg
    np.testing.assert_array_equal(back.forward(x, training=False).data,
                                  model.forward(x, training=False).data)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_text("hello\n")
    with pytest.raises(DataError):
        load_checkpoint(path)
