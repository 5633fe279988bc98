import gzip
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrvae.errors import ConfigError, FormatError
from mrvae.evaluation import Provenance, RDCurve, RDPoint
from mrvae.gates import BetaConditioner
from mrvae.linalg import RngStream, SpectrumDecomp
from mrvae.linear import analytic_rd_curve
from mrvae.linear_gated import GatedLinearVAE
from mrvae.nn import Adam, Likelihood, backward, build_conv_vae, build_mlp_vae, forward
from mrvae.io import (
    IdxImages,
    SyntheticGaussian,
    config_hash,
    emit_rd_csv,
    load_checkpoint,
    load_config,
    load_dataset,
    load_idx,
    make_synthetic,
    read_rd_csv,
    save_checkpoint,
    write_idx,
)

# Four 2x3 images written out byte by byte: magic, count, rows, cols, pixels.
FOUR_IMAGES = bytes.fromhex(
    "00000803" "00000004" "00000002" "00000003"
    "00ff80" "7f0110"
    "ffffff" "000000"
    "808080" "7f7f7f"
    "c80a64" "ff0081"
)
FOUR_IMAGES_BITS = np.array([
    [0, 1, 1, 0, 0, 0],
    [1, 1, 1, 0, 0, 0],
    [1, 1, 1, 0, 0, 0],
    [1, 0, 0, 1, 0, 1],
], dtype=float)


@pytest.fixture
def four_images(tmp_path):
    path = tmp_path / "four.idx"
    path.write_bytes(FOUR_IMAGES)
    return path


def test_four_image_fixture_bits(four_images):
    np.testing.assert_array_equal(load_idx(four_images, 0.5), FOUR_IMAGES_BITS)
    raw = load_idx(four_images, None)
    assert raw[0, 1] == 1.0 and raw[0, 2] == 128 / 255


def test_gzip_and_max_items(tmp_path):
    path = tmp_path / "four.idx.gz"
    path.write_bytes(gzip.compress(FOUR_IMAGES))
    np.testing.assert_array_equal(load_idx(path, 0.5, max_items=2), FOUR_IMAGES_BITS[:2])


def test_header_only_file_is_empty(tmp_path):
    path = tmp_path / "empty.idx"
    path.write_bytes(struct.pack(">IIII", 0x803, 0, 28, 28))
    assert load_idx(path).shape == (0, 784)


def test_wrong_magic_names_expected(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(b"\x00\x00\x08\x01" + FOUR_IMAGES[4:])
    with pytest.raises(FormatError, match="0x00000803"):
        load_idx(path)


@pytest.mark.parametrize("byte", range(4))
def test_every_magic_mutation_rejected(tmp_path, byte):
    for bit in range(8):
        data = bytearray(FOUR_IMAGES)
        data[byte] ^= 1 << bit
        path = tmp_path / f"m{byte}{bit}.idx"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_idx(path)


def test_every_truncation_rejected(tmp_path):
    for cut in range(len(FOUR_IMAGES)):
        path = tmp_path / f"t{cut}.idx"
        path.write_bytes(FOUR_IMAGES[:cut])
        with pytest.raises(FormatError, match="offset"):
            load_idx(path)


def test_bad_threshold(four_images):
    with pytest.raises(ConfigError):
        load_idx(four_images, 1.5)


def test_write_idx_round_trip(tmp_path):
    imgs = RngStream(0).integers(0, 256, (3, 4, 5)).astype(np.uint8)
    for name in ("x.idx", "x.idx.gz"):
        write_idx(tmp_path / name, imgs)
        np.testing.assert_array_equal(load_idx(tmp_path / name, None), imgs.reshape(3, -1) / 255.0)
    with pytest.raises(FormatError):
        write_idx(tmp_path / "y.idx", imgs.astype(float))


def test_bundled_mnist_subset():
    data = load_idx("data/mnist5k-images-idx3-ubyte.gz", max_items=10)
    assert data.shape == (10, 784)
    assert set(np.unique(data)) <= {0.0, 1.0}


def test_synthetic_unit_spectrum_covariance():
    d, n = 4, 20000
    data, sp = make_synthetic(SyntheticGaussian(dim=d, spectrum=[1.0] * d, n_samples=n, seed=3))
    cov = data.T @ data / n
    # Var(x_i x_j) is 2 on the diagonal and 1 off it for a standard normal
    se = np.where(np.eye(d, dtype=bool), np.sqrt(2.0 / n), np.sqrt(1.0 / n))
    assert np.all(np.abs(cov - np.eye(d)) <= 3 * se)
    np.testing.assert_array_equal(sp.eigvals, np.ones(d))


def test_synthetic_single_sample_rank():
    data, _ = make_synthetic(SyntheticGaussian(dim=5, spectrum=[5, 4, 3, 2, 1], n_samples=1))
    assert np.linalg.matrix_rank(data.T @ data) <= 1


def test_synthetic_deterministic_and_generating_spectrum():
    spec = SyntheticGaussian(dim=3, spectrum=[3, 2, 1], n_samples=50, seed=9)
    a, sa = make_synthetic(spec)
    b, sb = make_synthetic(spec)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(sa.reconstruct(), sa.eigvecs @ np.diag([3, 2, 1]) @ sa.eigvecs.T, atol=1e-14)


@pytest.mark.parametrize("bad", [
    {"dim": 2, "spectrum": [1.0, 0.0], "n_samples": 5},
    {"dim": 2, "spectrum": [1.0, 2.0], "n_samples": 5},
    {"dim": 3, "spectrum": [2.0, 1.0], "n_samples": 5},
    {"dim": 2, "spectrum": [2.0, 1.0], "n_samples": 0},
])
def test_synthetic_spec_validation(bad):
    with pytest.raises(ValueError):
        SyntheticGaussian(**bad)


def test_idx_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        IdxImages(path="x", binarize_threshold=2.0)
    (tmp_path / "f.idx").write_bytes(FOUR_IMAGES)
    data, sp = load_dataset(IdxImages(path="f.idx"), base_dir=tmp_path)
    assert data.shape == (4, 6) and sp is None


def test_csv_empty_curve(tmp_path):
    path = tmp_path / "c.csv"
    emit_rd_csv(RDCurve(()), path)
    assert path.read_text() == "beta,rate,distortion,elbo,au\n"
    assert len(read_rd_csv(path)) == 0


def test_csv_two_point_analytic_curve(tmp_path):
    curve = analytic_rd_curve(SpectrumDecomp.from_eigvals([2.0, 1.0]), [0.5, 3.0], 2)
    path = tmp_path / "c.csv"
    emit_rd_csv(curve, path)
    text = path.read_text()
    assert text.endswith("\n") and len(text.splitlines()) == 3
    assert text.splitlines()[1].endswith(",")  # no active-unit count


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(0.001, 100), st.floats(0, 1e4), st.floats(-1e4, 1e4),
                          st.one_of(st.none(), st.floats(-1e4, 1e4)), st.one_of(st.none(), st.integers(0, 64))),
                min_size=0, max_size=8, unique_by=lambda t: f"{t[0]:.9g}"))
def test_csv_round_trip(tmp_path_factory, rows):
    rows = sorted(rows)
    curve = RDCurve(tuple(RDPoint(*r) for r in rows))
    path = tmp_path_factory.mktemp("csv") / "c.csv"
    emit_rd_csv(curve, path)
    back = read_rd_csv(path)
    assert len(back) == len(curve)
    for p, q in zip(curve.points, back.points):
        for a, b in ((p.beta, q.beta), (p.rate, q.rate), (p.distortion, q.distortion)):
            # half a unit in the ninth significant digit
            assert abs(a - b) <= 5e-9 * abs(a) + 1e-300
        assert (p.elbo_beta1 is None) == (q.elbo_beta1 is None)
        assert p.au == q.au
    again = path.with_name("again.csv")
    emit_rd_csv(back, again)
    assert again.read_bytes() == path.read_bytes()


def test_csv_malformed(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("beta,rate\n1,2\n")
    with pytest.raises(FormatError):
        read_rd_csv(path)
    path.write_text("beta,rate,distortion,elbo,au\n1,2\n")
    with pytest.raises(FormatError):
        read_rd_csv(path)


def test_csv_unwritable_path_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_rd_csv(RDCurve(()), blocker / "c.csv")


def _trained_step(model, x, beta):
    opt = Adam(lr=1e-2)
    res = forward(model, x, beta, rng=RngStream(1))
    opt.step(model.params(), backward(model, res.tape))
    return opt


@pytest.mark.parametrize("builder", ["mlp", "mlp_film", "conv", "ungated"])
def test_checkpoint_round_trip_bit_exact(tmp_path, builder):
    rng = RngStream(0)
    if builder == "conv":
        model = build_conv_vae((1, 8, 8), (2, 3), 2, (6,), rng=rng, gate_heads=True)
        x = (RngStream(2).uniform(size=(3, 64)) > 0.5).astype(float)
    else:
        kw = {"gated": builder != "ungated"}
        if builder == "mlp_film":
            kw.update(encoder_gate="film", decoder_gate="film")
        model = build_mlp_vae(10, [7], 3, [7], rng=rng, likelihood=Likelihood.GAUSSIAN,
                              conditioner=BetaConditioner(0.1, 5.0), **kw)
        x = RngStream(2).normal((3, 10))
    opt = _trained_step(model, x, 0.7)
    path = tmp_path / "m.ckpt.json"
    save_checkpoint(path, model, opt, step=1, config={"a": 1})
    ck = load_checkpoint(path)
    eps = RngStream(3).normal((3, model.latent_dim))
    a = forward(model, x, 0.7, eps=eps)
    b = forward(ck.model, x, 0.7, eps=eps)
    np.testing.assert_array_equal(a.recon_params, b.recon_params)
    np.testing.assert_array_equal(a.z_logvar, b.z_logvar)
    assert ck.step == 1 and ck.config_hash == config_hash({"a": 1})
    assert ck.model.conditioner == model.conditioner
    for k in opt.m:
        np.testing.assert_array_equal(opt.m[k], ck.optimizer.m[k])
        np.testing.assert_array_equal(opt.v[k], ck.optimizer.v[k])
    assert ck.optimizer.t == opt.t


def test_linear_checkpoint_round_trip(tmp_path):
    model = GatedLinearVAE.init(5, 2, RngStream(0), mean=np.arange(5.0), conditioner=BetaConditioner())
    path = tmp_path / "lin.json"
    save_checkpoint(path, model)
    back = load_checkpoint(path).model
    for b in (0.02, 1.0, 9.0):
        for u, v in zip(model.response(b), back.response(b)):
            np.testing.assert_array_equal(u, v)
    np.testing.assert_array_equal(back.mean, model.mean)


def test_checkpoint_corruption(tmp_path):
    model = build_mlp_vae(4, [3], 2, [3], rng=RngStream(0))
    path = tmp_path / "m.json"
    save_checkpoint(path, model)
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_checkpoint(path)
    path.write_text("{not json")
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def _write(tmp_path, obj):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(obj))
    return path


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="extra"):
        load_config(_write(tmp_path, {"experiment": "verify-theorem1", "bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {"experiment": "verify-theorem1", "train": {"epochs": 1, "lrr": 0.1}}))


def test_config_requirements(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {"experiment": "train-mrvae"}))
    syn = {"kind": "synthetic_gaussian", "dim": 2, "spectrum": [2, 1], "n_samples": 10}
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {"experiment": "sweep-rd", "dataset": syn}))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.json")
    cfg = load_config(_write(tmp_path, {"experiment": "train-mrvae", "dataset": syn}))
    assert cfg.dataset.kind == "synthetic_gaussian"


def test_shipped_configs_validate():
    from pathlib import Path
    for path in sorted(Path("configs").glob("*.json")):
        cfg = load_config(path)
        assert path.stem.replace("_mnist", "").replace("_", "-") == cfg.experiment
