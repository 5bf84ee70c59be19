"""Adapter around a pretrained latent-diffusion model.

Optional: requires ``torch``, ``diffusers`` and ``transformers``.  Model
weights are resolved through the usual hub cache, or from ``$TIIL_MODEL_DIR``
when that variable is set.  All operations run in the model's latent space;
masks and difference maps are resampled to pixel resolution at the boundary.

This adapter exists so the protocol in :mod:`tiil.backends` has a full-scale
implementation; the deterministic synthetic backend remains the reference for
tests and benchmarks.
"""

from __future__ import annotations

import os

import numpy as np

from .backends import BackendBundle, BackendLoadError, NoiseSchedule, TokenEmbeddingMatrix

__all__ = ["load_diffusion_backend"]

MODEL_DIR_ENV = "TIIL_MODEL_DIR"


def load_diffusion_backend(model_id: str, device: str | None = None) -> BackendBundle:
    """Load a pretrained text-to-image diffusion model as a backend bundle."""
    try:
        import torch
        from diffusers import AutoencoderKL, DDIMScheduler, UNet2DConditionModel
        from transformers import CLIPModel, CLIPProcessor, CLIPTokenizer, CLIPTextModel
    except ImportError as exc:
        raise BackendLoadError(
            f"diffusion backend {model_id!r} needs the optional ML dependencies "
            "(torch, diffusers, transformers)"
        ) from exc

    cache_dir = os.environ.get(MODEL_DIR_ENV) or None
    device = device or ("cuda" if torch.cuda.is_available() else "cpu")
    try:
        tokenizer = CLIPTokenizer.from_pretrained(model_id, subfolder="tokenizer", cache_dir=cache_dir)
        text_encoder = CLIPTextModel.from_pretrained(model_id, subfolder="text_encoder", cache_dir=cache_dir)
        vae = AutoencoderKL.from_pretrained(model_id, subfolder="vae", cache_dir=cache_dir)
        unet = UNet2DConditionModel.from_pretrained(model_id, subfolder="unet", cache_dir=cache_dir)
        ddim = DDIMScheduler.from_pretrained(model_id, subfolder="scheduler", cache_dir=cache_dir)
        clip = CLIPModel.from_pretrained("openai/clip-vit-large-patch14", cache_dir=cache_dir)
        clip_processor = CLIPProcessor.from_pretrained("openai/clip-vit-large-patch14", cache_dir=cache_dir)
    except Exception as exc:  # hub/IO failures surface as load errors
        raise BackendLoadError(f"failed to load diffusion backend {model_id!r}: {exc}") from exc

    model = _LatentDiffusionModel(
        torch, tokenizer, text_encoder, vae, unet, ddim, clip, clip_processor, device
    )
    return BackendBundle(
        text_encoder=model,
        image_encoder=model,
        generator=model,
        noise_estimator=model,
        inpainter=model,
        schedule=model.schedule,
        guidance_scale=7.5,
        capabilities={"differentiable_generator": True, "concurrent_inference": False},
        backend_id=f"diffusion:{model_id}",
    )


class _LatentDiffusionModel:
    """Protocol implementation over (tokenizer, text encoder, VAE, U-Net)."""

    def __init__(self, torch, tokenizer, text_encoder, vae, unet, ddim, clip, clip_processor, device):
        self.torch = torch
        self.tokenizer = tokenizer
        self.text_model = text_encoder.to(device).eval()
        self.vae = vae.to(device).eval()
        self.unet = unet.to(device).eval()
        self.ddim = ddim
        self.clip = clip.to(device).eval()
        self.clip_processor = clip_processor
        self.device = device
        self.num_inference_steps = 50
        self.ddim.set_timesteps(self.num_inference_steps)
        alphas = self.ddim.alphas_cumprod[self.ddim.timesteps.cpu()].cpu().numpy()
        self.schedule = NoiseSchedule(np.clip(alphas, 1e-6, 1.0 - 1e-6))

    # -- text ---------------------------------------------------------------

    def encode_text(self, text: str) -> TokenEmbeddingMatrix:
        torch = self.torch
        enc = self.tokenizer(
            text, truncation=True, max_length=self.tokenizer.model_max_length, return_tensors="pt"
        )
        with torch.no_grad():
            states = self.text_model(enc.input_ids.to(self.device)).last_hidden_state[0]
        tokens = self.tokenizer.convert_ids_to_tokens(enc.input_ids[0])
        return TokenEmbeddingMatrix(states.cpu().numpy(), tuple(tokens), origin="text")

    # -- image embedding ------------------------------------------------------

    def encode_image(self, image: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        torch = self.torch
        arr = np.asarray(image, dtype=np.float64)
        if mask is not None:
            arr = arr * np.asarray(mask, dtype=bool)[:, :, None]
        pixels = (arr * 255.0).astype(np.uint8)
        inputs = self.clip_processor(images=pixels, return_tensors="pt").to(self.device)
        with torch.no_grad():
            feats = self.clip.get_image_features(**inputs)[0]
        vec = feats.cpu().numpy().astype(np.float64)
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm > 1e-9 else np.eye(1, vec.size, 0)[0]

    # -- latent helpers -------------------------------------------------------

    def _to_latents(self, image: np.ndarray):
        torch = self.torch
        t = torch.as_tensor(np.asarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
        t = (t * 2.0 - 1.0).to(self.device)
        with torch.no_grad():
            return self.vae.encode(t).latent_dist.mean * self.vae.config.scaling_factor

    def _to_image(self, latents) -> np.ndarray:
        torch = self.torch
        with torch.no_grad():
            decoded = self.vae.decode(latents / self.vae.config.scaling_factor).sample[0]
        arr = ((decoded.permute(1, 2, 0).cpu().numpy() + 1.0) / 2.0).clip(0.0, 1.0)
        return arr.astype(np.float64)

    def _cond(self, embeddings: TokenEmbeddingMatrix | np.ndarray):
        torch = self.torch
        rows = embeddings.rows if isinstance(embeddings, TokenEmbeddingMatrix) else embeddings
        return torch.as_tensor(np.asarray(rows, dtype=np.float32))[None].to(self.device)

    # -- diffusion ops --------------------------------------------------------

    def estimate_noise(self, x_t: np.ndarray, t: int, embeddings) -> np.ndarray:
        torch = self.torch
        step = self.ddim.timesteps[int(t)]
        latents = torch.as_tensor(np.asarray(x_t, dtype=np.float32)).to(self.device)
        if latents.ndim == 3:  # pixel-space input: move to latent space
            latents = self._to_latents(x_t)
        with torch.no_grad():
            out = self.unet(latents, step, encoder_hidden_states=self._cond(embeddings)).sample
        return out.cpu().numpy().astype(np.float64)

    def generate(self, x_t: np.ndarray, embeddings) -> np.ndarray:
        torch = self.torch
        latents = torch.as_tensor(np.asarray(x_t, dtype=np.float32)).to(self.device)
        if latents.ndim == 3:
            latents = torch.randn(
                (1, self.unet.config.in_channels,
                 self.unet.config.sample_size, self.unet.config.sample_size),
                generator=torch.Generator(self.device).manual_seed(0),
                device=self.device,
            )
        cond = self._cond(embeddings)
        with torch.no_grad():
            for step in self.ddim.timesteps:
                eps = self.unet(latents, step, encoder_hidden_states=cond).sample
                latents = self.ddim.step(eps, step, latents).prev_sample
        return self._to_image(latents)

    def generate_vjp(self, x_t: np.ndarray, embeddings, cotangent: np.ndarray) -> np.ndarray:
        torch = self.torch
        rows = embeddings.rows if isinstance(embeddings, TokenEmbeddingMatrix) else embeddings
        cond = torch.as_tensor(np.asarray(rows, dtype=np.float32), device=self.device)
        cond.requires_grad_(True)
        latents = torch.randn(
            (1, self.unet.config.in_channels,
             self.unet.config.sample_size, self.unet.config.sample_size),
            generator=torch.Generator(self.device).manual_seed(0),
            device=self.device,
        )
        x = latents
        for step in self.ddim.timesteps:
            eps = self.unet(x, step, encoder_hidden_states=cond[None]).sample
            x = self.ddim.step(eps, step, x).prev_sample
        decoded = self.vae.decode(x / self.vae.config.scaling_factor).sample[0]
        image = (decoded.permute(1, 2, 0) + 1.0) / 2.0
        cot = torch.as_tensor(np.asarray(cotangent, dtype=np.float32), device=self.device)
        (grad,) = torch.autograd.grad(image, cond, grad_outputs=cot)
        return grad.cpu().numpy().astype(np.float64)

    def inpaint(self, image: np.ndarray, mask: np.ndarray, embeddings) -> np.ndarray:
        torch = self.torch
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            return np.asarray(image, dtype=np.float64).copy()
        regenerated = self.generate(np.asarray(image, dtype=np.float64), embeddings)
        out = np.asarray(image, dtype=np.float64).copy()
        out[m] = regenerated[m]
        return out
