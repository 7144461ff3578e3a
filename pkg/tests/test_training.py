import dataclasses
import math

import numpy as np
import pytest
import torch

from cvid.core.dataset import build_dataset, manifest_from_dirs
from cvid.core.errors import ConfigurationError, TrainingDivergedError
from cvid.core.imaging import from_tensor, save_image
from cvid.core.rain import RainParams, density_ground_truth
from cvid.core.scenes import write_scenes
from cvid.execution import trainer
from cvid.execution.inference import DerainResult, InferenceConfig, derain_sweep
from cvid.execution.trainer import (
    StepRecord,
    TrainConfig,
    TrainLog,
    compute_loss,
    load_training_set,
    train,
    validate,
)
from cvid.metrics.quality import psnr
from cvid.ml.networks import CVIDNet, NetworkConfig
from cvid.utils.records import load_jsonl

TINY_NETWORK = NetworkConfig(depth=2, filters=4, sde_layers=2)


def _quick_config(**overrides):
    values = dict(
        epochs=2,
        batch_size=2,
        patch_size=16,
        lr=1e-3,
        lr_decay=0.5,
        dtype="float64",
        log_every=1,
        network=TINY_NETWORK,
    )
    values.update(overrides)
    return TrainConfig(**values)


def _step(step, total=1.0):
    return StepRecord(step=step, epoch=1, lr=0.1, kl=0.0, rec=total, sde=0.0, cvae=total, total=total, wall_time=0.0)


def _random_batch(seed, n=4, size=8):
    gen = torch.Generator().manual_seed(seed)
    return tuple(torch.rand(n, 3, size, size, generator=gen, dtype=torch.float64) for _ in range(3))


class TestComputeLoss:
    def test_reconstruction_alone_trains_the_density_module(self):
        model = CVIDNet(TINY_NETWORK, seed=0).to(torch.float64).train()
        config = TrainConfig(beta=0.0, lam=0.0, network=TINY_NETWORK)
        breakdown, _ = compute_loss(model, *_random_batch(1), config, noise_seed=4)
        breakdown.total.backward()
        for branch in model.branches.values():
            grads = [p.grad for p in branch.sde.parameters()]
            assert all(g is not None for g in grads)
            assert any(g.abs().sum() > 0 for g in grads)

    def test_one_step_lowers_the_loss(self):
        model = CVIDNet(TINY_NETWORK, seed=2).to(torch.float64).train()
        config = _quick_config()
        batch = _random_batch(3)
        optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=config.weight_decay)
        before, _ = compute_loss(model, *batch, config, noise_seed=9)
        optimizer.zero_grad()
        before.total.backward()
        optimizer.step()
        with torch.no_grad():
            after, _ = compute_loss(model, *batch, config, noise_seed=9)
        assert float(after.total) < float(before.total)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lr": 0.0},
            {"lr_decay": 0.0},
            {"lr_decay": 1.5},
            {"beta": -1.0},
            {"lam": -0.5},
            {"epochs": 0},
            {"batch_size": 0},
            {"max_steps": 0},
            {"dtype": "float16"},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs)

    def test_network_from_dict(self):
        config = TrainConfig(network={"depth": 3, "filters": 8})
        assert config.network == NetworkConfig(depth=3, filters=8)
        assert config.to_dict()["network"]["depth"] == 3
        assert TrainConfig.from_dict(config.to_dict()) == config


class TestTrainLog:
    def test_steps_must_increase(self):
        log = TrainLog()
        log.add_step(_step(1))
        log.add_step(_step(2))
        with pytest.raises(ValueError):
            log.add_step(_step(2))

    def test_smoothing(self):
        log = TrainLog()
        for i, total in enumerate([10.0, 0.0, 0.0], start=1):
            log.add_step(_step(i, total))
        assert log.smoothed_totals(alpha=0.5) == [10.0, 5.0, 2.5]

    def test_write_jsonl(self, tmp_path):
        log = TrainLog(header={"beta": 0.1})
        log.add_step(_step(1))
        records = load_jsonl(log.write(tmp_path / "log.jsonl"))
        assert [r["kind"] for r in records] == ["header", "step"]
        assert records[0]["beta"] == 0.1
        assert records[1]["step"] == 1


class TestTrainingSet:
    def test_tensor_shapes(self, tiny_dataset):
        dataset = load_training_set(tiny_dataset, 16, seed=0, dtype=torch.float64)
        rainy, clean, density = dataset.tensors
        assert rainy.shape == clean.shape == density.shape == (4, 3, 16, 16)
        assert rainy.dtype == torch.float64

    def test_crops_stay_aligned(self, tiny_dataset):
        rainy, clean, density = load_training_set(tiny_dataset, 8, seed=3, dtype=torch.float64).tensors
        for i in range(len(rainy)):
            labels = density_ground_truth(from_tensor(clean[i]), from_tensor(rainy[i]))
            expected = np.concatenate([plane.data for plane in labels], axis=2)
            assert np.max(np.abs(from_tensor(density[i]).data - expected)) <= 1 / (2 * 255) + 1e-12

    def test_density_required(self, tmp_path, random_image):
        save_image(random_image(8, 8), tmp_path / "rainy" / "a.png")
        save_image(random_image(8, 8), tmp_path / "clean" / "a.png")
        with pytest.raises(ConfigurationError, match="density"):
            load_training_set(manifest_from_dirs(tmp_path / "rainy", tmp_path / "clean"), 8, 0, torch.float32)

    def test_patch_too_large(self, tiny_dataset):
        with pytest.raises(ConfigurationError):
            load_training_set(tiny_dataset, 32, seed=0, dtype=torch.float32)


class TestTrain:
    def test_steps_epochs_and_lr_decay(self, tmp_path, tiny_dataset):
        seen = []
        checkpoint, log = train(tiny_dataset, _quick_config(), checkpoint_dir=tmp_path / "ckpt", on_step=seen.append)
        assert [r.step for r in log.steps] == [1, 2, 3, 4]
        assert seen == log.steps
        assert [r.epoch for r in log.steps] == [1, 1, 2, 2]
        assert [e.lr for e in log.epochs] == pytest.approx([1e-3, 5e-4])
        assert all(math.isfinite(e.val_psnr) and math.isfinite(e.val_ssim) for e in log.epochs)
        assert sorted(p.name for p in (tmp_path / "ckpt").iterdir()) == [
            "checkpoint_e001_s000002.pt",
            "checkpoint_e002_s000004.pt",
        ]
        assert checkpoint.metadata["step"] == 4
        assert log.header["pairs"] == 4

    def test_max_steps(self, tiny_dataset):
        _, log = train(tiny_dataset, _quick_config(epochs=5, max_steps=3))
        assert log.steps[-1].step == 3
        assert len(log.epochs) == 2

    def test_same_seed_same_checkpoint(self, tiny_dataset):
        a, log_a = train(tiny_dataset, _quick_config(seed=5))
        b, log_b = train(tiny_dataset, _quick_config(seed=5))
        assert log_a.totals() == log_b.totals()
        for key, tensor in a.state.items():
            assert torch.equal(tensor, b.state[key]), key

    def test_different_seed_differs(self, tiny_dataset):
        a, _ = train(tiny_dataset, _quick_config(seed=1, epochs=1))
        b, _ = train(tiny_dataset, _quick_config(seed=2, epochs=1))
        assert any(not torch.equal(t, b.state[k]) for k, t in a.state.items())

    def test_divergence_reports_step(self, tiny_dataset, monkeypatch):
        real = trainer.compute_loss
        calls = []

        def poisoned(*args, **kwargs):
            breakdown, out = real(*args, **kwargs)
            calls.append(1)
            if len(calls) == 2:
                breakdown = dataclasses.replace(breakdown, total=breakdown.total * float("nan"))
            return breakdown, out

        monkeypatch.setattr(trainer, "compute_loss", poisoned)
        with pytest.raises(TrainingDivergedError) as info:
            train(tiny_dataset, _quick_config())
        assert info.value.step == 2
        assert info.value.last_finite_step == 1

    def test_validate_small_images_has_no_ssim(self, tmp_path, scene_dir, light_rain, tiny_model):
        manifest = build_dataset(scene_dir, light_rain, count=2, patch_size=8, out_dir=tmp_path / "small")
        value_psnr, value_ssim = validate(tiny_model, manifest)
        assert math.isfinite(value_psnr)
        assert math.isnan(value_ssim)

    def test_validate_perfect_restoration_hits_the_cap(self, tmp_path, random_image, tiny_model, monkeypatch):
        for name in ("a.png", "b.png"):
            image = random_image(16, 16)
            save_image(image, tmp_path / "rainy" / name)
            save_image(image, tmp_path / "clean" / name)
        manifest = manifest_from_dirs(tmp_path / "rainy", tmp_path / "clean")
        monkeypatch.setattr(
            trainer, "derain", lambda x, model, config: DerainResult(image=x, density=x, elapsed_seconds=0.0)
        )
        value_psnr, value_ssim = validate(tiny_model, manifest)
        assert value_psnr == 100.0
        assert value_ssim == pytest.approx(1.0)

    def test_validate_is_order_independent(self, tiny_dataset, tiny_model):
        tiny_model.eval()
        reversed_manifest = dataclasses.replace(tiny_dataset, entries=tiny_dataset.entries[::-1])
        forward = validate(tiny_model, tiny_dataset, n_samples=2, seed=4)
        backward = validate(tiny_model, reversed_manifest, n_samples=2, seed=4)
        assert forward == pytest.approx(backward, abs=1e-9)

    def test_joint_branch_training(self, tiny_dataset):
        joint = dataclasses.replace(TINY_NETWORK, channel_wise=False)
        checkpoint, log = train(tiny_dataset, _quick_config(epochs=1, network=joint))
        assert checkpoint.config.channel_wise is False
        assert all(math.isfinite(total) for total in log.totals())
        assert checkpoint.channel_state("RGB")


HEAVY_RAIN = dict(
    streak_count=30,
    length_range=(6.0, 16.0),
    thickness=1.5,
    intensity_ranges=((0.5, 0.8), (0.4, 0.7), (0.3, 0.6)),
)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    write_scenes(root / "scenes_train", count=8, size=64, seed=100)
    write_scenes(root / "scenes_test", count=4, size=64, seed=900)
    train_set = build_dataset(
        root / "scenes_train", RainParams(seed=1, **HEAVY_RAIN), count=200, patch_size=32, out_dir=root / "train"
    )
    held_out = build_dataset(
        root / "scenes_test", RainParams(seed=2, **HEAVY_RAIN), count=20, patch_size=32, out_dir=root / "test"
    )
    config = TrainConfig(
        epochs=10, batch_size=8, patch_size=32, lr=2e-3, lr_decay=1.0, seed=0, log_every=50
    )
    checkpoint, log = train(train_set, config, validation=held_out)
    return checkpoint, log, held_out


@pytest.mark.slow
class TestSmokeTraining:
    def test_smoothed_loss_halves(self, smoke_run):
        _, log, _ = smoke_run
        smoothed = log.smoothed_totals()
        assert len(smoothed) >= 200
        assert smoothed[199] <= 0.5 * smoothed[9]

    def test_deraining_beats_rainy_input(self, smoke_run):
        checkpoint, _, held_out = smoke_run
        model = checkpoint.to_model()
        rainy_psnr, derained_psnr = [], []
        for index in range(held_out.count):
            clean, rainy = held_out.load_pair(index)
            rainy_psnr.append(psnr(rainy, clean))
            outputs = derain_sweep(rainy, model, InferenceConfig(seed=index), [100])
            derained_psnr.append(psnr(outputs[100], clean))
        assert np.mean(rainy_psnr) <= 25.0
        assert np.mean(derained_psnr) >= np.mean(rainy_psnr) + 2.0

    def test_more_samples_do_not_hurt(self, smoke_run):
        checkpoint, _, held_out = smoke_run
        model = checkpoint.to_model()
        scores = {1: [], 10: [], 100: []}
        for index in range(held_out.count):
            clean, rainy = held_out.load_pair(index)
            outputs = derain_sweep(rainy, model, InferenceConfig(seed=index), list(scores))
            for n, image in outputs.items():
                scores[n].append(psnr(image, clean))
        mean = {n: float(np.mean(v)) for n, v in scores.items()}
        assert mean[10] >= mean[1]
        assert mean[100] >= mean[10] - 0.05
