"""Generator and discriminator networks for the teacher and student.

The generator is a U-Net style encoder-decoder: strided conv downsampling to
a 1x1 latent bottleneck, transposed-conv upsampling back, with each encoder
activation concatenated onto the mirror decoder stage. The discriminator is a
plain conv encoder (leaky rectifiers, batch norm except on the input block)
whose penultimate feature map is exposed as the feature representation f(.)
used by the latent and distillation losses.

Teacher and student share the topology; they differ only in the channel
width of the first block, which every later width is a multiple of.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import ExperimentConfig

ROLE_TEACHER = "teacher"
ROLE_STUDENT = "student"


@dataclass(frozen=True)
class NetworkArch:
    """Structural description of one generator/discriminator pair."""

    role: str
    base_width: int
    image_size: int
    channels: int
    latent_dim: int
    depth: int

    def __post_init__(self):
        if self.role not in (ROLE_TEACHER, ROLE_STUDENT):
            raise ValueError(f"role must be teacher or student, got {self.role!r}")
        if self.base_width <= 0 or self.latent_dim <= 0:
            raise ValueError("base_width and latent_dim must be positive")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.image_size % (1 << self.depth) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^depth ({1 << self.depth})"
            )
        if self.bottleneck_spatial < 2:
            raise ValueError("network too deep: bottleneck spatial size < 2")

    @property
    def bottleneck_spatial(self) -> int:
        return self.image_size >> self.depth

    @property
    def widths(self) -> tuple[int, ...]:
        # Doubles per stage, capped at 8x the base width.
        return tuple(min(self.base_width << k, 8 * self.base_width) for k in range(self.depth))

    @property
    def feature_channels(self) -> int:
        return self.widths[-1]


def arch_from_config(config: ExperimentConfig, role: str, equal_size: bool = False) -> NetworkArch:
    """Derive the architecture for one role; depth puts the bottleneck at 4x4."""
    width = config.teacher_base_width
    if role == ROLE_STUDENT and not equal_size:
        width = config.student_base_width
    depth = config.image_size.bit_length() - 1 - 2  # log2(image_size) - 2
    return NetworkArch(
        role=role,
        base_width=width,
        image_size=config.image_size,
        channels=config.channels,
        latent_dim=config.latent_dim,
        depth=depth,
    )


def _conv_block(c_in: int, c_out: int, batch_norm: bool) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1, bias=not batch_norm)]
    if batch_norm:
        layers.append(nn.BatchNorm2d(c_out))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


def _deconv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class Generator(nn.Module):
    """Skip-connected encoder-decoder mapping images to reconstructions.

    ``forward`` returns ``(x_hat, z)`` where ``x_hat`` is the tanh-bounded
    reconstruction and ``z`` the flattened bottleneck latent. ``use_skips``
    exists for the skip-connection ablation; disabling it changes parameter
    counts but not output shapes.
    """

    def __init__(self, arch: NetworkArch, use_skips: bool = True):
        super().__init__()
        self.arch = arch
        self.use_skips = use_skips
        widths = arch.widths

        encoder = []
        c_in = arch.channels
        for k, c_out in enumerate(widths):
            encoder.append(_conv_block(c_in, c_out, batch_norm=(k > 0)))
            c_in = c_out
        self.encoder = nn.ModuleList(encoder)

        ks = arch.bottleneck_spatial
        self.to_latent = nn.Conv2d(widths[-1], arch.latent_dim, ks, stride=1, padding=0, bias=True)
        self.from_latent = nn.Sequential(
            nn.ConvTranspose2d(arch.latent_dim, widths[-1], ks, stride=1, padding=0, bias=False),
            nn.BatchNorm2d(widths[-1]),
            nn.ReLU(inplace=True),
        )

        skip_mult = 2 if use_skips else 1
        decoder = []
        for k in range(arch.depth - 1, 0, -1):
            decoder.append(_deconv_block(widths[k] * skip_mult, widths[k - 1]))
        self.decoder = nn.ModuleList(decoder)
        self.to_image = nn.ConvTranspose2d(widths[0] * skip_mult, arch.channels,
                                           4, stride=2, padding=1, bias=True)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        skips = []
        h = x
        for block in self.encoder:
            h = block(h)
            skips.append(h)
        z_map = self.to_latent(h)
        h = self.from_latent(z_map)
        for k, block in enumerate(self.decoder):
            if self.use_skips:
                h = torch.cat([h, skips[self.arch.depth - 1 - k]], dim=1)
            h = block(h)
        if self.use_skips:
            h = torch.cat([h, skips[0]], dim=1)
        x_hat = torch.tanh(self.to_image(h))
        return x_hat, z_map.flatten(1)


class Discriminator(nn.Module):
    """Conv encoder scoring real vs generated, exposing penultimate features."""

    def __init__(self, arch: NetworkArch):
        super().__init__()
        self.arch = arch
        widths = arch.widths
        blocks = []
        c_in = arch.channels
        for k, c_out in enumerate(widths):
            blocks.append(_conv_block(c_in, c_out, batch_norm=(k > 0)))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)
        self.classifier = nn.Conv2d(widths[-1], 1, arch.bottleneck_spatial,
                                    stride=1, padding=0, bias=True)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for block in self.blocks:
            h = block(h)
        return h

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (probability of being real, penultimate feature map)."""
        f = self.features(x)
        prob = torch.sigmoid(self.classifier(f)).flatten()
        return prob, f


@dataclass
class ModelPair:
    """One network stack (generator + discriminator) for a given role."""

    role: str
    arch: NetworkArch
    generator: Generator
    discriminator: Discriminator

    def train(self) -> None:
        self.generator.train()
        self.discriminator.train()

    def eval(self) -> None:
        self.generator.eval()
        self.discriminator.eval()

    def freeze(self) -> None:
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def parameters(self):
        yield from self.generator.parameters()
        yield from self.discriminator.parameters()

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def to_double(self) -> None:
        self.generator.double()
        self.discriminator.double()


@dataclass(frozen=True)
class NetworkOutputs:
    """Everything one forward pass exposes for losses and scoring."""

    x_hat: torch.Tensor        # reconstruction, same shape as input, in [-1, 1]
    z: torch.Tensor            # bottleneck latent, (batch, latent_dim)
    f_x: torch.Tensor          # discriminator features of the real input
    f_xhat: torch.Tensor       # discriminator features of the reconstruction
    logits_real: torch.Tensor  # per-sample realness probability for x
    logits_fake: torch.Tensor  # per-sample realness probability for x_hat

    def __post_init__(self):
        if self.f_x.shape != self.f_xhat.shape:
            raise ValueError("f_x and f_xhat shapes differ")


def _init_weights(module: nn.Module) -> None:
    # DCGAN-style initialization.
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


def build_generator(arch: NetworkArch, use_skips: bool = True, seed: int | None = None) -> Generator:
    with torch.random.fork_rng():
        if seed is not None:
            torch.manual_seed(seed)
        gen = Generator(arch, use_skips=use_skips)
        gen.apply(_init_weights)
    return gen


def build_discriminator(arch: NetworkArch, seed: int | None = None) -> Discriminator:
    with torch.random.fork_rng():
        if seed is not None:
            torch.manual_seed(seed)
        disc = Discriminator(arch)
        disc.apply(_init_weights)
    return disc


def build_pair(arch: NetworkArch, seed: int, use_skips: bool = True) -> ModelPair:
    gen = build_generator(arch, use_skips=use_skips, seed=seed)
    disc = build_discriminator(arch, seed=seed + 1)
    return ModelPair(role=arch.role, arch=arch, generator=gen, discriminator=disc)


def build_student_teacher(config: ExperimentConfig, equal_size: bool = False,
                          use_skips: bool = True) -> tuple[ModelPair, ModelPair]:
    """Build (student, teacher) pairs with identical topology.

    ``equal_size`` forces the student to the teacher's width (the size
    ablation); otherwise the student uses its narrower configured width.
    """
    teacher_arch = arch_from_config(config, ROLE_TEACHER)
    student_arch = arch_from_config(config, ROLE_STUDENT, equal_size=equal_size)
    teacher = build_pair(teacher_arch, seed=config.seed * 1000 + 1, use_skips=use_skips)
    student = build_pair(student_arch, seed=config.seed * 1000 + 3, use_skips=use_skips)
    return student, teacher


def forward_network(pair: ModelPair, batch: torch.Tensor) -> NetworkOutputs:
    """Run generator and discriminator, bundling all critical activations."""
    if batch.ndim != 4 or batch.shape[1] != pair.arch.channels \
            or batch.shape[2] != pair.arch.image_size or batch.shape[3] != pair.arch.image_size:
        raise ValueError(
            f"batch shape {tuple(batch.shape)} does not match arch "
            f"({pair.arch.channels}, {pair.arch.image_size}, {pair.arch.image_size})"
        )
    x_hat, z = pair.generator(batch)
    logits_real, f_x = pair.discriminator(batch)
    logits_fake, f_xhat = pair.discriminator(x_hat)
    return NetworkOutputs(x_hat=x_hat, z=z, f_x=f_x, f_xhat=f_xhat,
                          logits_real=logits_real, logits_fake=logits_fake)


def match_channels(features: torch.Tensor, target_channels: int) -> torch.Tensor:
    """Reduce a wider feature map to ``target_channels`` by channel-group averaging.

    A fixed, non-learned adapter making teacher/student feature maps
    comparable when their widths differ. Only reduction is meaningful for an
    averaging adapter, so the wider tensor must be the one passed in.
    """
    c = features.shape[1]
    if c == target_channels:
        return features
    if c < target_channels:
        raise ValueError(f"cannot widen features from {c} to {target_channels} channels")
    b, _, h, w = features.shape
    flat = features.permute(0, 2, 3, 1).reshape(b * h * w, 1, c)
    pooled = F.adaptive_avg_pool1d(flat, target_channels)
    return pooled.reshape(b, h, w, target_channels).permute(0, 3, 1, 2)


def matched_feature_pair(student_f: torch.Tensor, teacher_f: torch.Tensor
                         ) -> tuple[torch.Tensor, torch.Tensor]:
    """Return the feature pair reduced to the common (narrower) width."""
    target = min(student_f.shape[1], teacher_f.shape[1])
    return match_channels(student_f, target), match_channels(teacher_f, target)


def parameter_checksum(pair: ModelPair) -> str:
    """Digest over all parameters and buffers; detects any drift."""
    import hashlib

    h = hashlib.sha256()
    for module in (pair.generator, pair.discriminator):
        for name, tensor in sorted(module.state_dict().items()):
            h.update(name.encode("utf-8"))
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()
