"""avatex: relightable PBR head textures from one image or prompt.

The pipeline is a desk-scale latent-diffusion stack: a toy autoencoder and
denoiser U-Net trained on procedurally generated head data, an attention
feature-swap delighting stage, a landmark-fitted parametric head, and a
two-phase (inpaint, then energy-guided) texture sampler that emits diffuse,
normal, specular and roughness maps from a single latent.
"""

__version__ = "0.1.0"
