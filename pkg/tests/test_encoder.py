import numpy as np
import pytest
import torch

from armplan.encoder import CaeConfig, CaeModel, cae_loss, reconstruction_mse, train_cae
from armplan.world import Scene, SphereObstacle, sample_point_cloud

# desk-sized config: same architecture family, smaller widths for test speed
SMALL = CaeConfig(input_dim=4200, hidden=(128, 64), latent_dim=60, lambda_reg=0.0,
                  batch=16, lr=1e-3, seed=0)


def _cloud_batch(n, seed0=0, centers=None):
    out = []
    for i in range(n):
        rng = np.random.default_rng(1000 + seed0 + i)
        center = centers[i % len(centers)] if centers is not None else rng.uniform(
            [-0.6, -0.6, 0.2], [0.6, 0.6, 1.0])
        scene = Scene(spheres=(SphereObstacle(np.array(center), 0.2),))
        out.append(sample_point_cloud(scene, 1400, seed=seed0 + i).flat())
    return np.stack(out)


def test_config_validation():
    with pytest.raises(ValueError):
        CaeConfig(input_dim=4201)
    with pytest.raises(ValueError):
        CaeConfig(latent_dim=0)
    assert CaeConfig().k_points == 1400


def test_encode_shape_and_determinism():
    model = CaeModel(SMALL)
    cloud = _cloud_batch(1)[0]
    a = model.encode(cloud)
    b = model.encode(cloud)
    assert a.shape == (60,)
    np.testing.assert_array_equal(a, b)


def test_encode_dimension_mismatch():
    model = CaeModel(SMALL)
    with pytest.raises(ValueError):
        model.encode(np.zeros(4203))


def test_loss_zero_on_perfect_reconstruction():
    # identity-capable config: make the model tiny and check the loss formula
    cfg = CaeConfig(input_dim=6, hidden=(8,), latent_dim=6, lambda_reg=0.0, seed=1)
    model = CaeModel(cfg)
    x = torch.zeros((3, 6))
    # zero input reconstructs to decoder bias path; force recon == x by zeroing
    with torch.no_grad():
        for name in model.store.names():
            model.store[name].zero_()
    assert float(cae_loss(model, x)) == 0.0


def test_loss_zero_decoder_is_mean_sq_norm():
    model = CaeModel(SMALL)
    with torch.no_grad():
        for name in model.store.names():
            if name.startswith("dec/"):
                model.store[name].zero_()
    batch = _cloud_batch(4)
    loss = float(cae_loss(model, batch))
    pts = batch.reshape(4, 1400, 3)
    expected = float(np.mean(np.sum(pts ** 2, axis=2).mean(axis=1)))
    assert abs(loss - expected) < 1e-4 * max(1.0, expected)


def test_regularizer_term():
    cfg = CaeConfig(input_dim=6, hidden=(4,), latent_dim=2, lambda_reg=0.5, seed=2)
    model = CaeModel(cfg)
    x = torch.zeros((1, 6))
    with torch.no_grad():
        for name in model.store.names():
            if name.startswith("dec/"):
                model.store[name].zero_()
    loss = float(cae_loss(model, x))
    assert abs(loss - 0.5 * float(model.encoder_sq_norm())) < 1e-6


def test_loss_decreases_on_overfit_set():
    clouds = _cloud_batch(32)
    cfg = CaeConfig(input_dim=4200, hidden=(128, 64), latent_dim=60, lambda_reg=0.0,
                    batch=32, lr=3e-4, seed=3)
    model = CaeModel(cfg)
    from armplan.nncore import AdamState, adam_step, backward
    state = AdamState.for_store(model.store, lr=cfg.lr)
    losses = []
    data = torch.from_numpy(clouds.astype(np.float32))
    for _ in range(100):
        model.store.zero_grad()
        loss = cae_loss(model, data)
        losses.append(float(loss))
        backward(loss)
        adam_step(model.store, state)
    # full-batch training at the default learning rate: strictly decreasing
    assert all(b < a for a, b in zip(losses[:-1], losses[1:]))


@pytest.mark.slow
def test_overfit_single_cloud():
    cloud = _cloud_batch(1)
    cfg = CaeConfig(input_dim=4200, hidden=(128, 64), latent_dim=60, lambda_reg=0.0,
                    batch=1, lr=1e-3, seed=4)
    model = train_cae(cfg, cloud, steps=5000, target_mse=1e-3)
    assert reconstruction_mse(model, cloud) < 1e-3


def test_train_empty_dataset_errors():
    with pytest.raises(ValueError):
        train_cae(SMALL, np.zeros((0, 4200)))


def test_freeze_contract():
    model = train_cae(SMALL, _cloud_batch(4), steps=30)
    assert model.frozen
    before = model.checksum
    assert model.verify_frozen()
    # parameters refuse gradient updates once frozen
    assert all(not p.requires_grad for p in model.store.parameters())
    assert model.store.checksum() == before


def test_train_deterministic():
    clouds = _cloud_batch(6)
    a = train_cae(SMALL, clouds, steps=40)
    b = train_cae(SMALL, clouds, steps=40)
    assert a.store.checksum() == b.store.checksum()


def test_save_load_roundtrip(tmp_path):
    model = train_cae(SMALL, _cloud_batch(4), steps=30)
    path = tmp_path / "cae.rdck"
    model.save(path)
    again = CaeModel.load(path)
    assert again.frozen
    assert again.store.checksum() == model.store.checksum()
    cloud = _cloud_batch(1)[0]
    np.testing.assert_array_equal(model.encode(cloud), again.encode(cloud))


@pytest.mark.slow
def test_distinct_scenes_distinct_codes():
    # well-separated single-sphere scenes must map to distinguishable codes
    centers = [np.array([-0.6, -0.6, 0.3]), np.array([0.6, 0.6, 1.0])]
    train_clouds = _cloud_batch(48, seed0=50)
    cfg = CaeConfig(input_dim=4200, hidden=(256, 128), latent_dim=60, lambda_reg=1e-5,
                    batch=16, lr=1e-3, seed=5)
    model = train_cae(cfg, train_clouds, steps=1200)
    held = _cloud_batch(2, seed0=999, centers=centers)
    za, zb = model.encode(held[0]), model.encode(held[1])
    cos = float(np.dot(za, zb) / (np.linalg.norm(za) * np.linalg.norm(zb)))
    assert cos < 0.99


@pytest.mark.slow
def test_heldout_not_grossly_overfit():
    # small-scale stand-in for the desk-scale invariant (re-checked in e2e)
    train_clouds = _cloud_batch(256, seed0=100)
    held_clouds = _cloud_batch(32, seed0=9000)
    cfg = CaeConfig(input_dim=4200, hidden=(256, 128), latent_dim=60, lambda_reg=0.0,
                    batch=32, lr=1e-3, seed=6)
    model = train_cae(cfg, train_clouds, steps=600)
    train_mse = reconstruction_mse(model, train_clouds)
    held_mse = reconstruction_mse(model, held_clouds)
    assert held_mse <= 2.0 * train_mse
