import math

import numpy as np
import pytest
import torch

from embryogen.fid import fid_between_sets
from embryogen.gan import (
    Discriminator,
    GanCheckpoint,
    GanError,
    GanTrainConfig,
    Generator,
    MappingNetwork,
    augment_batch,
    discriminator_loss,
    generator_loss,
    map_latent,
    r1_penalty,
    sample_gan,
    train_gan,
)
from embryogen.records import Stage, STAGES
from embryogen.toygen import render_toy_images


def toy_pixels(stage, count, seed=0, resolution=64):
    return np.stack(
        [t.pixels for t in render_toy_images(stage, count, seed=seed, resolution=resolution)]
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

class TestGeneratorLoss:
    def test_zero_logit_gives_ln2(self):
        loss = generator_loss(torch.tensor([0.0]))
        assert float(loss) == pytest.approx(math.log(2.0), abs=1e-6)

    def test_large_logit_drives_loss_to_zero(self):
        assert float(generator_loss(torch.tensor([50.0]))) < 1e-20

    def test_mean_semantics(self):
        double = generator_loss(torch.tensor([0.0, 0.0]))
        single = generator_loss(torch.tensor([0.0]))
        assert float(double) == pytest.approx(float(single))

    def test_strictly_decreasing_in_each_logit(self):
        logits = torch.tensor([-1.0, 0.0, 2.0])
        h = 1e-3
        base = float(generator_loss(logits))
        for i in range(3):
            bumped = logits.clone()
            bumped[i] += h
            assert float(generator_loss(bumped)) < base

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            generator_loss(torch.tensor([float("nan")]))


class TestDiscriminatorLoss:
    def test_perfect_discriminator_near_zero(self):
        loss = discriminator_loss(torch.tensor([50.0]), torch.tensor([-50.0]))
        assert float(loss) < 1e-20

    def test_zero_logits_give_two_ln2(self):
        loss = discriminator_loss(torch.tensor([0.0]), torch.tensor([0.0]))
        assert float(loss) == pytest.approx(2 * math.log(2.0), abs=1e-6)

    def test_swap_with_negation_identity(self):
        torch.manual_seed(0)
        real, fake = torch.randn(8), torch.randn(8)
        original = discriminator_loss(real, fake)
        swapped = discriminator_loss(-fake, -real)
        assert float(original) == pytest.approx(float(swapped), abs=1e-6)

    def test_gradients_match_finite_differences_through_small_net(self):
        torch.manual_seed(3)
        net = torch.nn.Linear(5, 1).double()
        real_in = torch.randn(4, 5, dtype=torch.float64)
        fake_in = torch.randn(4, 5, dtype=torch.float64)

        def loss_value():
            return discriminator_loss(net(real_in).squeeze(1), net(fake_in).squeeze(1))

        loss = loss_value()
        net.zero_grad()
        loss.backward()
        weight_grad = net.weight.grad.clone()
        h = 1e-6
        for i, j in [(0, 0), (0, 2), (0, 4)]:
            with torch.no_grad():
                net.weight[i, j] += h
                up = float(loss_value())
                net.weight[i, j] -= 2 * h
                down = float(loss_value())
                net.weight[i, j] += h
            numeric = (up - down) / (2 * h)
            analytic = float(weight_grad[i, j])
            assert abs(numeric - analytic) / max(abs(analytic), 1e-8) < 1e-4


class TestR1Penalty:
    def test_zero_gradient_zero_penalty(self):
        assert float(r1_penalty(torch.zeros(2, 1, 4, 4), 10.0)) == 0.0

    def test_hand_case_four_unit_elements(self):
        grad = torch.ones(1, 1, 2, 2)
        assert float(r1_penalty(grad, 10.0)) == 20.0

    def test_exactly_linear_in_gamma(self):
        torch.manual_seed(1)
        grad = torch.randn(3, 1, 4, 4)
        assert float(r1_penalty(grad, 2.5)) == 2.0 * float(r1_penalty(grad, 1.25))

    def test_nonnegative(self):
        torch.manual_seed(2)
        for _ in range(10):
            assert float(r1_penalty(torch.randn(4, 1, 8, 8), 10.0)) >= 0.0

    def test_negative_gamma_rejected(self):
        with pytest.raises(ValueError):
            r1_penalty(torch.ones(1, 4), -1.0)


# ---------------------------------------------------------------------------
# mapping network
# ---------------------------------------------------------------------------

class TestMapping:
    def test_identity_initialized_single_layer(self):
        mapping = MappingNetwork(dim=6, layers=1)
        with torch.no_grad():
            mapping.layers[0].weight.copy_(torch.eye(6))
            mapping.layers[0].bias.zero_()
        z = torch.randn(4, 6)
        torch.testing.assert_close(map_latent(z, mapping), z)

    def test_deterministic(self):
        torch.manual_seed(0)
        mapping = MappingNetwork(dim=8)
        z = torch.randn(3, 8)
        torch.testing.assert_close(map_latent(z, mapping), map_latent(z, mapping))

    def test_batch_order_preserved(self):
        torch.manual_seed(0)
        mapping = MappingNetwork(dim=8)
        z = torch.randn(5, 8)
        batched = map_latent(z, mapping)
        for i in range(5):
            torch.testing.assert_close(
                batched[i], map_latent(z[i : i + 1], mapping)[0], atol=1e-5, rtol=1e-5
            )

    def test_non_finite_rejected(self):
        mapping = MappingNetwork(dim=4)
        bad = torch.full((1, 4), float("inf"))
        with pytest.raises(ValueError, match="finite"):
            map_latent(bad, mapping)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

class TestAugmentation:
    def test_shape_and_range_preserved(self):
        images = torch.from_numpy(toy_pixels(Stage.MORULA, 6)).unsqueeze(1)
        out = augment_batch(images, torch.Generator().manual_seed(0))
        assert out.shape == images.shape
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_pixel_multiset_preserved_per_image(self):
        # flips and rolls permute pixels without changing values
        images = torch.from_numpy(toy_pixels(Stage.TWO_CELL, 3)).unsqueeze(1)
        out = augment_batch(images, torch.Generator().manual_seed(1))
        for i in range(3):
            np.testing.assert_allclose(
                np.sort(out[i].numpy().ravel()), np.sort(images[i].numpy().ravel())
            )

    def test_seeded_determinism(self):
        images = torch.from_numpy(toy_pixels(Stage.TWO_CELL, 4)).unsqueeze(1)
        a = augment_batch(images, torch.Generator().manual_seed(7))
        b = augment_batch(images, torch.Generator().manual_seed(7))
        torch.testing.assert_close(a, b, rtol=0, atol=0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class TestTrainGan:
    def test_empty_dataset_rejected(self):
        with pytest.raises(GanError, match="empty"):
            train_gan(np.zeros((0, 64, 64)), GanTrainConfig(steps=1))

    def test_pretrained_missing_weights_names_path(self):
        config = GanTrainConfig(
            steps=1, init="pretrained", pretrained_path="/nonexistent/ffhq.ckpt"
        )
        with pytest.raises(GanError, match="/nonexistent/ffhq.ckpt"):
            train_gan(toy_pixels(Stage.TWO_CELL, 4), config)

    def test_zero_learning_rate_leaves_weights_bit_identical(self):
        data = toy_pixels(Stage.TWO_CELL, 8, resolution=64)
        config = GanTrainConfig(
            steps=1, batch_size=4, lr_generator=0.0, lr_discriminator=0.0,
            resolution=64, style_dim=32, checkpoint_interval=1, seed=5,
        )
        torch.manual_seed(config.seed)
        reference = Generator(resolution=64, style_dim=32, base=16)
        result = train_gan(data, config, base_channels=16)
        trained_state = result.checkpoints[-1].generator_state
        for key, value in reference.state_dict().items():
            assert torch.equal(trained_state[key], value), key

    def test_checkpoint_marks_and_naming(self, tmp_path):
        data = toy_pixels(Stage.MORULA, 8)
        config = GanTrainConfig(
            steps=5, batch_size=4, resolution=64, style_dim=32,
            checkpoint_interval=2, seed=0, augmentation=False,
        )
        result = train_gan(data, config, stage=Stage.MORULA, out_dir=tmp_path,
                           base_channels=16)
        assert [c.step for c in result.checkpoints] == [2, 4, 5]
        assert result.checkpoints[0].ref == "gan_morula_s2.ckpt"
        assert (tmp_path / "gan_morula_s5.ckpt").exists()

    def test_checkpoint_round_trip_and_hash(self, tmp_path):
        data = toy_pixels(Stage.EIGHT_CELL, 6)
        config = GanTrainConfig(
            steps=2, batch_size=4, resolution=64, style_dim=32,
            checkpoint_interval=2, seed=0,
        )
        result = train_gan(data, config, stage=Stage.EIGHT_CELL, out_dir=tmp_path,
                           base_channels=16)
        saved = result.checkpoints[-1]
        loaded = GanCheckpoint.load(tmp_path / saved.ref)
        assert loaded.content_hash == saved.content_hash
        np.testing.assert_array_equal(loaded.sample(2, seed=1), saved.sample(2, seed=1))

    def test_resume_from_pretrained_checkpoint(self, tmp_path):
        data = toy_pixels(Stage.TWO_CELL, 6)
        config = GanTrainConfig(
            steps=2, batch_size=4, resolution=64, style_dim=32,
            checkpoint_interval=2, seed=0,
        )
        first = train_gan(data, config, stage=Stage.TWO_CELL, out_dir=tmp_path,
                          base_channels=16)
        path = tmp_path / first.checkpoints[-1].ref
        resumed_config = GanTrainConfig(
            steps=1, batch_size=4, lr_generator=0.0, lr_discriminator=0.0,
            init="pretrained", pretrained_path=str(path),
            resolution=64, style_dim=32, checkpoint_interval=1, seed=1,
        )
        resumed = train_gan(data, resumed_config, stage=Stage.TWO_CELL,
                            base_channels=16)
        for key, value in first.checkpoints[-1].generator_state.items():
            assert torch.equal(resumed.checkpoints[-1].generator_state[key], value)

    def test_five_stages_give_five_series(self, tmp_path):
        config = GanTrainConfig(
            steps=1, batch_size=2, resolution=64, style_dim=32,
            checkpoint_interval=1, seed=0, augmentation=False,
        )
        refs = []
        for stage in STAGES:
            result = train_gan(
                toy_pixels(stage, 2), config, stage=stage, out_dir=tmp_path,
                base_channels=8,
            )
            refs.extend(c.ref for c in result.checkpoints)
        assert refs == [f"gan_{s.value}_s1.ckpt" for s in STAGES]

    def test_fid_improves_over_training_curve(self):
        # deterministic end-to-end curve check: the scored embedding
        # distance at the final step must beat the step-100 checkpoint
        data = toy_pixels(Stage.TWO_CELL, 128, seed=0)
        config = GanTrainConfig(
            steps=2000, batch_size=8, resolution=64, style_dim=128,
            lr_generator=1e-3, lr_discriminator=1e-3,
            checkpoint_interval=100, seed=0, augmentation=True,
        )
        result = train_gan(data, config, stage=Stage.TWO_CELL, base_channels=32)
        early = result.checkpoints[0]
        late = result.checkpoints[-1]
        assert early.step == 100 and late.step == 2000
        fid_early = fid_between_sets(data, early.sample(256, seed=9), "toy-pool")
        fid_late = fid_between_sets(data, late.sample(256, seed=9), "toy-pool")
        assert fid_late < fid_early, (
            f"fid at step 2000 ({fid_late:.3f}) not below step 100 ({fid_early:.3f})"
        )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def quick_checkpoint(tmp_path=None):
    data = toy_pixels(Stage.MORULA, 6)
    config = GanTrainConfig(
        steps=1, batch_size=4, resolution=64, style_dim=32,
        checkpoint_interval=1, seed=0, augmentation=False,
    )
    result = train_gan(data, config, stage=Stage.MORULA, base_channels=16)
    return result.checkpoints[-1]


class TestSampleGan:
    def test_deterministic_per_seed(self):
        checkpoint = quick_checkpoint()
        np.testing.assert_array_equal(
            sample_gan(checkpoint, 4, seed=3), sample_gan(checkpoint, 4, seed=3)
        )

    def test_different_seeds_differ(self):
        checkpoint = quick_checkpoint()
        a = sample_gan(checkpoint, 4, seed=3)
        b = sample_gan(checkpoint, 4, seed=4)
        assert not np.array_equal(a, b)

    def test_resolution_and_range(self):
        checkpoint = quick_checkpoint()
        out = sample_gan(checkpoint, 3, seed=0)
        assert out.shape == (3, 64, 64)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_count_enforced(self):
        checkpoint = quick_checkpoint()
        assert sample_gan(checkpoint, 70, seed=0).shape[0] == 70
        with pytest.raises(ValueError):
            sample_gan(checkpoint, 0, seed=0)
