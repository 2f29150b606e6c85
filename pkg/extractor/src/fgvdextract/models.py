"""Model registry: deterministic stubs plus lazily-imported real backends.

Model id grammar (the part after ':' is optional):

    stub-echo[:template]     fixed-text generator; '{id}', '{label}', '{prompt}'
                             placeholders are substituted per item
    stub-hash[:dim]          pseudo-embeddings seeded by a content hash
    stub-noise[:size]        seeded-noise image reconstruction
    clip-text[:hf_id]        CLIP text encoder pooled embeddings
    clip-image[:hf_id]       CLIP image encoder pooled embeddings
    sbert[:model_id]         Sentence-BERT sentence embeddings
    inception                Inception-v3 pooled features (2048-d)
    sd[:hf_id]               Stable Diffusion text-to-image (default v1.4)
    hf-vlm:hf_id             vision-to-text generation via transformers

Real backends need the 'models' extra plus downloaded weights; they raise
ModelUnavailableError with an actionable message when either is missing.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

DEFAULT_EMBED_DIM = 64
DEFAULT_IMAGE_SIZE = 64
DEFAULT_CLIP = "openai/clip-vit-base-patch32"
DEFAULT_SBERT = "sentence-transformers/all-MiniLM-L6-v2"
DEFAULT_SD = "CompVis/stable-diffusion-v1-4"
SD_DEFAULTS = {"num_inference_steps": 50, "guidance_scale": 7.5}


class ModelUnavailableError(RuntimeError):
    """The requested backend cannot be loaded in this environment."""


def _hash_seed(*parts: bytes) -> np.random.Generator:
    digest = hashlib.sha256(b"\x00".join(parts)).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


class EchoGenerator:
    """Deterministic stand-in for an LVLM: emits a fixed template."""

    def __init__(self, template: str = "a photo with distinctive shape and color details"):
        self.template = template

    def generate(self, prompt: str, item: dict, params) -> str:
        return (self.template
                .replace("{id}", item.get("id", ""))
                .replace("{label}", item.get("label", ""))
                .replace("{prompt}", prompt))


class HashEmbedder:
    """Pseudo-encoder: unit-free Gaussian vector seeded by a content hash,
    so identical inputs always map to identical vectors."""

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        return self._embed(text.encode("utf-8"))

    def embed_image(self, path) -> np.ndarray:
        with open(path, "rb") as fh:
            return self._embed(fh.read())

    def _embed(self, payload: bytes) -> np.ndarray:
        rng = _hash_seed(b"hash-embed", payload)
        return rng.standard_normal(self.dim).astype(np.float32)


class NoiseReconstructor:
    """Stand-in for a diffusion model: seeded RGB noise per description."""

    def __init__(self, size: int = DEFAULT_IMAGE_SIZE):
        if size < 1:
            raise ValueError("image size must be >= 1")
        self.size = size

    def reconstruct(self, description: str, seed: int) -> Image.Image:
        rng = _hash_seed(b"noise-recon", str(seed).encode(), description.encode("utf-8"))
        arr = rng.integers(0, 256, (self.size, self.size, 3), dtype=np.uint8)
        return Image.fromarray(arr, mode="RGB")


# --- real backends (lazy imports) ---------------------------------------------

def _unavailable(spec: str, exc: Exception) -> ModelUnavailableError:
    return ModelUnavailableError(
        f"cannot load model '{spec}': {exc}. Install the 'models' extra "
        "(pip install 'fgvd-extract[models]') and ensure weights are available.")


class ClipTextEmbedder:
    def __init__(self, model_id: str = DEFAULT_CLIP):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise _unavailable(f"clip-text:{model_id}", exc)
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise _unavailable(f"clip-text:{model_id}", exc)
        self._torch = torch
        self._model.eval()

    def embed_text(self, text: str) -> np.ndarray:
        inputs = self._processor(text=[text], return_tensors="pt",
                                 padding=True, truncation=True)
        with self._torch.no_grad():
            features = self._model.get_text_features(**inputs)
        return features[0].cpu().numpy().astype(np.float32)


class ClipImageEmbedder:
    def __init__(self, model_id: str = DEFAULT_CLIP):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise _unavailable(f"clip-image:{model_id}", exc)
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise _unavailable(f"clip-image:{model_id}", exc)
        self._torch = torch
        self._model.eval()

    def embed_image(self, path) -> np.ndarray:
        image = Image.open(path).convert("RGB")
        inputs = self._processor(images=image, return_tensors="pt")
        with self._torch.no_grad():
            features = self._model.get_image_features(**inputs)
        return features[0].cpu().numpy().astype(np.float32)


class SbertEmbedder:
    def __init__(self, model_id: str = DEFAULT_SBERT):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise _unavailable(f"sbert:{model_id}", exc)
        try:
            self._model = SentenceTransformer(model_id)
        except Exception as exc:
            raise _unavailable(f"sbert:{model_id}", exc)

    def embed_text(self, text: str) -> np.ndarray:
        return np.asarray(self._model.encode(text), dtype=np.float32)


class InceptionFeatures:
    """Pooled Inception-v3 activations, the usual FID feature space."""

    def __init__(self):
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise _unavailable("inception", exc)
        try:
            weights = torchvision.models.Inception_V3_Weights.DEFAULT
            model = torchvision.models.inception_v3(weights=weights)
        except Exception as exc:
            raise _unavailable("inception", exc)
        model.fc = torch.nn.Identity()
        model.eval()
        self._torch = torch
        self._model = model
        self._preprocess = weights.transforms()

    def embed_image(self, path) -> np.ndarray:
        image = Image.open(path).convert("RGB")
        batch = self._preprocess(image).unsqueeze(0)
        with self._torch.no_grad():
            features = self._model(batch)
        return features[0].cpu().numpy().astype(np.float32)


class StableDiffusionReconstructor:
    def __init__(self, model_id: str = DEFAULT_SD):
        try:
            import torch
            from diffusers import StableDiffusionPipeline
        except ImportError as exc:
            raise _unavailable(f"sd:{model_id}", exc)
        try:
            self._pipe = StableDiffusionPipeline.from_pretrained(model_id)
        except Exception as exc:
            raise _unavailable(f"sd:{model_id}", exc)
        self._torch = torch
        self.defaults = dict(SD_DEFAULTS)

    def reconstruct(self, description: str, seed: int) -> Image.Image:
        generator = self._torch.Generator().manual_seed(seed)
        result = self._pipe(description, generator=generator, **self.defaults)
        return result.images[0]


class HfVlmGenerator:
    """Generic vision-to-text generation with beam search parameters."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import AutoModelForVision2Seq, AutoProcessor
        except ImportError as exc:
            raise _unavailable(f"hf-vlm:{model_id}", exc)
        try:
            self._processor = AutoProcessor.from_pretrained(model_id)
            self._model = AutoModelForVision2Seq.from_pretrained(model_id)
        except Exception as exc:
            raise _unavailable(f"hf-vlm:{model_id}", exc)
        self._torch = torch
        self._model.eval()

    def generate(self, prompt: str, item: dict, params) -> str:
        image = Image.open(item["image_path"]).convert("RGB")
        inputs = self._processor(images=image, text=prompt, return_tensors="pt")
        with self._torch.no_grad():
            output = self._model.generate(
                **inputs,
                num_beams=params.beam_size,
                length_penalty=params.length_penalty,
                max_new_tokens=params.max_new_tokens or 30)
        decoded = self._processor.batch_decode(output, skip_special_tokens=True)[0]
        # raw decoded continuation: strip the echoed prompt when present
        return decoded[len(prompt):].strip() if decoded.startswith(prompt) else decoded


def resolve_model(spec: str, task: str):
    """Instantiate the backend named by a model id for the given task."""
    kind, _, arg = spec.partition(":")
    if kind == "stub-echo":
        return EchoGenerator(arg) if arg else EchoGenerator()
    if kind == "stub-hash":
        return HashEmbedder(int(arg)) if arg else HashEmbedder()
    if kind == "stub-noise":
        return NoiseReconstructor(int(arg)) if arg else NoiseReconstructor()
    if kind == "clip-text":
        return ClipTextEmbedder(arg or DEFAULT_CLIP)
    if kind == "clip-image":
        return ClipImageEmbedder(arg or DEFAULT_CLIP)
    if kind == "sbert":
        return SbertEmbedder(arg or DEFAULT_SBERT)
    if kind == "inception":
        return InceptionFeatures()
    if kind == "sd":
        return StableDiffusionReconstructor(arg or DEFAULT_SD)
    if kind == "hf-vlm":
        if not arg:
            raise ValueError("hf-vlm requires a model id, e.g. hf-vlm:Salesforce/blip2-opt-2.7b")
        return HfVlmGenerator(arg)
    raise ValueError(f"unknown model id '{spec}' for task '{task}'")
