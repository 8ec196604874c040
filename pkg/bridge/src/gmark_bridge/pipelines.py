"""Generation/inversion backends.

Two backends share one interface: the mock pipeline, a lossless test
double whose decode/encode is the identity at latent resolution (the
latent bytes travel inside a PNG), and a latent-diffusion adapter that
drives a real text-to-image pipeline through the `diffusers` library when
it is installed. The mock keeps the whole loop runnable and bit-exact on
a bare CPU box; the real path is documented but needs model weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image, PngImagePlugin

SHAPE_KEY = "gmark-latent-shape"


@dataclass(frozen=True)
class BridgeConfig:
    model: str = "mock"
    generation_steps: int = 50
    inversion_steps: int = 50
    generation_guidance: float = 7.5
    inversion_guidance: float = 0.0

    def __post_init__(self):
        if self.generation_steps < 1 or self.inversion_steps < 1:
            raise ValueError("step counts must be >= 1")


class MockPipeline:
    """Identity encode/decode at latent resolution.

    "Generation" packs the float32 latent bytes into a lossless RGBA PNG
    (with the shape recorded as metadata); "inversion" unpacks them. The
    image really is an image, but the round trip is exact, which is what
    the loop tests need.
    """

    def generate(self, latent: np.ndarray, prompt: str, image_path) -> None:
        arr = np.ascontiguousarray(latent, dtype="<f4")
        raw = arr.tobytes()
        n_px = (len(raw) + 3) // 4
        side = int(np.ceil(np.sqrt(n_px)))
        buf = np.zeros(side * side * 4, dtype=np.uint8)
        buf[: len(raw)] = np.frombuffer(raw, dtype=np.uint8)
        img = Image.frombytes("RGBA", (side, side), buf.tobytes())
        meta = PngImagePlugin.PngInfo()
        meta.add_text(SHAPE_KEY, json.dumps(list(arr.shape)))
        img.save(image_path, format="PNG", pnginfo=meta)

    def invert(self, image_path) -> np.ndarray:
        img = Image.open(image_path)
        if img.format != "PNG":
            raise ValueError(f"mock pipeline expects PNG, got {img.format}")
        shape_text = img.info.get(SHAPE_KEY)
        if shape_text is None:
            raise ValueError("image does not carry a latent shape (not a mock-generated image)")
        shape = tuple(json.loads(shape_text))
        count = int(np.prod(shape))
        raw = np.frombuffer(img.convert("RGBA").tobytes(), dtype=np.uint8)
        if raw.size < 4 * count:
            raise ValueError(f"image holds {raw.size} bytes, latent {shape} needs {4 * count}")
        return np.frombuffer(raw[: 4 * count].tobytes(), dtype="<f4").reshape(shape).copy()


class DiffusionPipeline:
    """Adapter around a diffusers text-to-image pipeline.

    Generation denoises the provided latent with the configured guidance;
    inversion encodes the image with the VAE and runs the DDIM scheduler
    backwards with an empty prompt and guidance 0. Needs `torch` and
    `diffusers` plus model weights, so it is exercised manually, not in
    the test suite. Scheduler details beyond DDIM follow the pipeline's
    defaults and are recorded in the sidecar metadata file.
    """

    def __init__(self, config: BridgeConfig):
        try:
            import torch  # noqa: F401
            from diffusers import DDIMInverseScheduler, DDIMScheduler, StableDiffusionPipeline
        except ImportError as e:  # pragma: no cover - optional dependency
            raise RuntimeError(
                "the real pipeline needs the 'torch' and 'diffusers' packages; "
                "use --model mock for the dependency-free test double"
            ) from e
        self._torch = torch
        self._DDIMScheduler = DDIMScheduler
        self._DDIMInverseScheduler = DDIMInverseScheduler
        self.config = config
        self.pipe = StableDiffusionPipeline.from_pretrained(config.model, safety_checker=None)
        self.pipe.scheduler = DDIMScheduler.from_config(self.pipe.scheduler.config)

    def generate(self, latent: np.ndarray, prompt: str, image_path) -> None:  # pragma: no cover
        torch = self._torch
        lat = torch.from_numpy(np.asarray(latent, dtype=np.float32))[None]
        image = self.pipe(
            prompt=prompt,
            latents=lat,
            num_inference_steps=self.config.generation_steps,
            guidance_scale=self.config.generation_guidance,
        ).images[0]
        image.save(image_path)
        self._write_sidecar(image_path)

    def invert(self, image_path) -> np.ndarray:  # pragma: no cover
        torch = self._torch
        from PIL import Image as PILImage

        img = PILImage.open(image_path).convert("RGB")
        px = torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0)
        px = px.permute(2, 0, 1)[None] * 2.0 - 1.0
        with torch.no_grad():
            z0 = self.pipe.vae.encode(px).latent_dist.mode() * self.pipe.vae.config.scaling_factor
        inverse = self._DDIMInverseScheduler.from_config(self.pipe.scheduler.config)
        forward = self.pipe.scheduler
        self.pipe.scheduler = inverse
        try:
            with torch.no_grad():
                out = self.pipe(
                    prompt="",
                    latents=z0,
                    num_inference_steps=self.config.inversion_steps,
                    guidance_scale=self.config.inversion_guidance,
                    output_type="latent",
                )
            est = out.images if hasattr(out, "images") else out[0]
        finally:
            self.pipe.scheduler = forward
        return est[0].cpu().numpy()

    def _write_sidecar(self, image_path) -> None:  # pragma: no cover
        meta = {
            "model": self.config.model,
            "generation_steps": self.config.generation_steps,
            "inversion_steps": self.config.inversion_steps,
            "generation_guidance": self.config.generation_guidance,
            "inversion_guidance": self.config.inversion_guidance,
            "scheduler": type(self.pipe.scheduler).__name__,
        }
        sidecar = str(image_path) + ".json"
        with open(sidecar, "w") as fh:
            json.dump(meta, fh, indent=2)


def make_pipeline(config: BridgeConfig):
    if config.model == "mock":
        return MockPipeline()
    return DiffusionPipeline(config)
