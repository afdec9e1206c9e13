"""Small configurations shared by the test modules."""
from scenegan.fields import FieldConfig, LatentCodes
from scenegan.generator import Generator, GeneratorConfig
from scenegan.neural_renderer import RendererConfig
from scenegan.scene import AffineTransform, CameraPose, SamplingConfig, SceneSample
from scenegan.training import DiscriminatorConfig, RunConfig, TrainConfig

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE = []


def small_generator(seed=0, dtype="float64", box=1.1, n_blocks=1, feature_resolution=4, n_samples=8):
    obj = FieldConfig(depth=2, hidden=16, feature_dim=8, shape_dim=4, appearance_dim=4)
    cfg = GeneratorConfig(object_field=obj, renderer=RendererConfig(feature_dim=8, n_blocks=n_blocks),
                          feature_resolution=feature_resolution, n_samples=n_samples, near=1.5, far=4.0,
                          object_box=box, dtype=dtype)
    return Generator(cfg, seed=seed)


def small_scene(rng, n_obj=2, dims=4):
    codes = [LatentCodes(rng.standard_normal(dims), rng.standard_normal(dims)) for _ in range(n_obj + 1)]
    transforms = [AffineTransform.from_yaw(rng.uniform(0.3, 0.6), [*rng.uniform(-0.4, 0.4, 2), 0.4],
                                           rng.uniform(0, 6.28)) for _ in range(n_obj)]
    return SceneSample(codes, transforms + [AffineTransform.identity()], CameraPose(elevation=0.5, azimuth=0.3))


def tiny_run_config(dataset="", dtype="float32", batch_size=4, feature_resolution=4, n_blocks=2, seed=0,
                    r1_lambda=10.0, density_noise=0.0):
    obj = FieldConfig(depth=2, hidden=16, feature_dim=8, shape_dim=8, appearance_dim=8)
    gen = GeneratorConfig(object_field=obj, renderer=RendererConfig(feature_dim=8, n_blocks=n_blocks),
                          feature_resolution=feature_resolution, n_samples=8, near=1.0, far=4.5,
                          density_noise_std=density_noise, dtype=dtype)
    res = feature_resolution * 2 ** n_blocks
    return RunConfig(train=TrainConfig(batch_size=batch_size, iterations=10, seed=seed, dataset=dataset,
                                       checkpoint_every=5, sample_every=0, r1_lambda=r1_lambda),
                     generator=gen, discriminator=DiscriminatorConfig(res, 4, 16),
                     sampling=SamplingConfig(object_counts=[2], shape_dim=8, appearance_dim=8))
