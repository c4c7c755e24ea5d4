"""Pipeline orchestration: training, generation, editing, relighting.

Every command here is a pure function of (config, inputs, checkpoints);
generation writes a run directory whose manifest pins seeds, input hashes
and output checksums, which is what the reproducibility contract keys on.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig
from .delight import DelightConfig, SemanticMask, delight, segment
from .diffusion.core import LatentCode, NoiseSchedule, make_schedule
from .diffusion.sampler import sample
from .errors import MissingArtifactError, PhaseError
from .geometry import meshio
from .geometry.camera import Camera
from .geometry.fitting import fit_landmarks
from .geometry.head import Mesh, ParametricHead
from .geometry.shading import LightRig, relight
from .manifest import RunManifest, hash_file
from .maps import PbrTextureSet, UvTexture
from .nn.autoencoder import AutoEncoder, PbrDecoderSet
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.conditioning import Condition, Vocabulary, default_vocabulary
from .nn.perceptual import PerceptualMetric
from .nn.unet import DenoiserNetwork, UNetSpec
from .nn import training
from .rngs import derive_seed, torch_rng
from .synth.dataset import Dataset, generate_and_export, load_dataset
from .synth.views import builtin_rigs, view_camera
from .texgen import TexgenConfig, decode_pbr_set, edit_textures, generate_textures

log = logging.getLogger(__name__)

COMPONENTS = ("autoencoder", "diffusion_image", "diffusion_texture", "pbr_decoders")


def schedule_from_config(config: ExperimentConfig) -> NoiseSchedule:
    s = config.schedule
    return make_schedule(s.kind, s.t_train, s.beta_start, s.beta_end)


def head_from_config(config: ExperimentConfig) -> ParametricHead:
    g = config.geometry
    return ParametricHead(n_lat=g.n_lat, n_lon=g.n_lon, n_id=g.n_id,
                          n_expr=g.n_expr, seed=g.head_seed)


def unet_spec_from_config(config: ExperimentConfig) -> UNetSpec:
    m = config.model
    return UNetSpec(latent_channels=m.latent_channels,
                    latent_size=m.image_size // m.latent_downsample,
                    channels=tuple(m.unet_channels),
                    cond_dim=m.cond_dim, temb_dim=m.temb_dim)


def texgen_config(config: ExperimentConfig) -> TexgenConfig:
    t = config.texgen
    return TexgenConfig(
        steps_total=t.steps_total, steps_guided=t.steps_guided, omega=t.omega,
        omega_p=t.omega_p, omega_e=t.omega_e, omega_photo=t.omega_photo,
        omega_lpips=t.omega_lpips, edit_omega_p=t.edit_omega_p,
        edit_omega_e=t.edit_omega_e, edit_strength=t.edit_strength,
        cfg_in_inpaint=t.cfg_in_inpaint, normalize_gradients=t.normalize_gradients)


def delight_config(config: ExperimentConfig) -> DelightConfig:
    d = config.delight
    return DelightConfig(steps=d.steps, exclude_last_k=d.exclude_last_k,
                         mask_source=d.mask_source)


def checkpoint_path(config: ExperimentConfig, component: str) -> Path:
    return Path(config.paths.checkpoint_root) / f"{component}.pt"


def default_camera(config: ExperimentConfig) -> Camera:
    g = config.geometry
    return view_camera(0, image_size=config.model.image_size,
                       distance=g.camera_distance, focal=g.camera_focal)


@dataclass
class Models:
    """Everything inference needs, loaded once."""

    config: ExperimentConfig
    schedule: NoiseSchedule
    vocab: Vocabulary
    head: ParametricHead
    ae: AutoEncoder
    image_net: DenoiserNetwork | None = None
    texture_net: DenoiserNetwork | None = None
    decoders: PbrDecoderSet | None = None
    perceptual: PerceptualMetric | None = None


# -- synth / train -----------------------------------------------------------


def cmd_synth(config: ExperimentConfig) -> Path:
    root = Path(config.paths.data_root)
    head = head_from_config(config)
    s = config.synth
    generate_and_export(root, head, n_identities=s.identities, n_views=s.views,
                        rig_names=tuple(s.rigs), master_seed=derive_seed(config.seed, "synth"),
                        tex_size=s.tex_size, image_size=config.model.image_size)
    return root


def _require_dataset(config: ExperimentConfig) -> Dataset:
    root = Path(config.paths.data_root)
    if not (root / "manifest.json").exists():
        raise MissingArtifactError(root / "manifest.json",
                                   "dataset not generated; run `avatex synth` first")
    return load_dataset(root)


def _frontal_visibility(config: ExperimentConfig, head: ParametricHead) -> np.ndarray:
    """Visibility mask of the neutral head from the default camera; used to
    augment autoencoder training with realistically masked textures."""
    from .geometry.raster import project_to_uv
    mesh = head.generate_mesh(np.zeros(head.n_id), np.zeros(head.n_expr))
    cam = default_camera(config)
    size = config.synth.tex_size
    blank = np.zeros((3, config.model.image_size, config.model.image_size), dtype=np.float32)
    _, vis = project_to_uv(blank, mesh, cam, (size, size),
                           latent_downsample=config.model.latent_downsample)
    return vis.uv_mask


def _load_ae(config: ExperimentConfig) -> AutoEncoder:
    payload = load_checkpoint(checkpoint_path(config, "autoencoder"), "autoencoder",
                              config.arch_fingerprint())
    ae = AutoEncoder(image_size=config.model.image_size,
                     latent_channels=config.model.latent_channels,
                     channels=tuple(config.model.ae_channels))
    ae.load_state_dict(payload["state_dict"])
    ae.eval()
    return ae


def cmd_train(config: ExperimentConfig, component: str, resume: bool = False) -> Path:
    if component not in COMPONENTS:
        raise MissingArtifactError(component, f"unknown component; expected {COMPONENTS}")
    dataset = _require_dataset(config)
    vocab = default_vocabulary()
    schedule = schedule_from_config(config)
    holdout = config.synth.holdout
    fingerprint = config.arch_fingerprint()
    out = checkpoint_path(config, component)
    tc = getattr(config.train, {"autoencoder": "autoencoder",
                                "diffusion_image": "image_model",
                                "diffusion_texture": "texture_model",
                                "pbr_decoders": "pbr_decoders"}[component])
    resume_state = None
    if resume:
        payload = load_checkpoint(out, component, fingerprint)
        resume_state = payload["extra"].get("trainer_state")
        if resume_state is None:
            raise MissingArtifactError(out, "checkpoint carries no trainer state to resume")
    seed = derive_seed(config.seed, "train", component)

    if component == "autoencoder":
        images, _ = training.assemble_image_training_set(dataset, vocab, holdout)
        textures, _ = training.assemble_texture_training_set(dataset, vocab, holdout)
        vis = _frontal_visibility(config, head_from_config(config))
        masked = textures * torch.from_numpy(vis.astype(np.float32))[None, None]
        data = torch.cat([images, textures, masked])
        ae, result = training.train_autoencoder(
            data, steps=tc.steps, batch_size=tc.batch_size, lr=tc.lr, seed=seed,
            image_size=config.model.image_size, channels=tuple(config.model.ae_channels),
            resume=resume_state)
        state, model = result.state, ae
    elif component in ("diffusion_image", "diffusion_texture"):
        ae = _load_ae(config)
        if component == "diffusion_image":
            images, conds = training.assemble_image_training_set(dataset, vocab, holdout)
        else:
            images, conds = training.assemble_texture_training_set(dataset, vocab, holdout)
        model, result = training.train_denoiser(
            ae, images, conds, schedule, vocab, steps=tc.steps, batch_size=tc.batch_size,
            lr=tc.lr, seed=seed, null_drop=config.train.null_drop,
            spec=unet_spec_from_config(config), resume=resume_state)
        state = result.state
    else:
        ae = _load_ae(config)
        diffuse, targets = training.assemble_pbr_training_set(dataset, holdout)
        model, result = training.train_pbr_decoders(
            ae, diffuse, targets, steps=tc.steps, batch_size=tc.batch_size, lr=tc.lr,
            seed=seed, lambda_weight=config.train.lambda_weight,
            channels=tuple(config.model.ae_channels), resume=resume_state)
        state = result.state

    save_checkpoint(out, component, model.state_dict(), fingerprint, schedule.params(),
                    extra={"losses": result.losses[::10], "trainer_state": state,
                           "seconds": result.seconds})
    return out


def load_models(config: ExperimentConfig,
                need: tuple = ("image", "texture", "pbr")) -> Models:
    vocab = default_vocabulary()
    models = Models(config=config, schedule=schedule_from_config(config), vocab=vocab,
                    head=head_from_config(config), ae=_load_ae(config),
                    perceptual=PerceptualMetric())
    spec = unet_spec_from_config(config)
    fingerprint = config.arch_fingerprint()
    if "image" in need:
        payload = load_checkpoint(checkpoint_path(config, "diffusion_image"),
                                  "diffusion_image", fingerprint)
        net = DenoiserNetwork(spec, vocab)
        net.load_state_dict(payload["state_dict"])
        net.eval()
        models.image_net = net
    if "texture" in need:
        payload = load_checkpoint(checkpoint_path(config, "diffusion_texture"),
                                  "diffusion_texture", fingerprint)
        net = DenoiserNetwork(spec, vocab)
        net.load_state_dict(payload["state_dict"])
        net.eval()
        models.texture_net = net
    if "pbr" in need:
        payload = load_checkpoint(checkpoint_path(config, "pbr_decoders"),
                                  "pbr_decoders", fingerprint)
        decoders = PbrDecoderSet(latent_channels=config.model.latent_channels)
        decoders.load_state_dict(payload["state_dict"])
        decoders.eval()
        models.decoders = decoders
    return models


# -- generate ----------------------------------------------------------------


def _phase(timings: dict, name: str):
    class _Timer:
        def __enter__(self):
            self.t0 = time.time()
            return self

        def __exit__(self, exc_type, exc, tb):
            timings[name] = round(time.time() - self.t0, 4)
            if exc is not None and not isinstance(exc, PhaseError):
                raise PhaseError(name, exc) from exc
            return False

    return _Timer()


def _resolve_mesh(models: Models, config: ExperimentConfig, mesh_params: dict | None,
                  landmarks: np.ndarray | None) -> tuple[Mesh, Camera, dict]:
    head = models.head
    camera = default_camera(config)
    if mesh_params is not None:
        beta = np.asarray(mesh_params["beta"], dtype=np.float64)
        psi = np.asarray(mesh_params.get("psi", np.zeros(head.n_expr)), dtype=np.float64)
        theta = np.asarray(mesh_params.get("theta", np.zeros(6)), dtype=np.float64)
        if "camera" in mesh_params:
            camera = Camera.from_dict(mesh_params["camera"])
        info = {"source": "params"}
    elif landmarks is not None:
        fit = fit_landmarks(landmarks, head, camera)
        beta, psi, theta = fit.beta, fit.psi, fit.theta
        info = {"source": "landmark_fit", "residual_px": fit.residual_px,
                "converged": fit.converged}
    else:
        # Neutral mesh: zero expression and pose, template identity.
        beta = np.zeros(head.n_id)
        psi = np.zeros(head.n_expr)
        theta = np.zeros(6)
        info = {"source": "neutral"}
    mesh = head.generate_mesh(beta, psi, theta)
    params = {"beta": beta.tolist(), "psi": psi.tolist(), "theta": theta.tolist(),
              "camera": camera.to_dict(), "fit": info}
    return mesh, camera, params


def cmd_generate(config: ExperimentConfig, out_dir, image_path=None, prompt: str = "",
                 mask_path=None, auto_mask_k: int | None = None,
                 mesh_params_path=None, landmarks_path=None,
                 skip_dce: bool = False, models: Models | None = None) -> Path:
    """SM-style pipeline: (t2i) -> delight -> mesh -> guided texture
    generation -> decode -> relight previews."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if models is None:
        models = load_models(config)
    vocab = models.vocab
    schedule = models.schedule
    timings: dict = {}
    manifest = RunManifest(config_fingerprint=config.fingerprint(),
                           arch_fingerprint=config.arch_fingerprint(),
                           seeds={"master": config.seed})
    (out_dir / "config.yaml").write_text(config.canonical_yaml())

    cond = vocab.parse_prompt(prompt) if prompt else vocab.null()
    uv_cond = vocab.parse_prompt(prompt, uv_mode=True) if prompt \
        else vocab.encode([], uv_mode=True)

    with _phase(timings, "t2i"):
        if image_path is not None:
            image = torch.from_numpy(meshio.read_png(image_path)).float()
            manifest.input_hashes["image"] = hash_file(image_path)
            if image.shape[0] == 1:
                image = image.expand(3, -1, -1)
        else:
            if not prompt:
                raise MissingArtifactError("input", "need --image or --prompt")
            g = torch_rng(config.seed, "t2i")
            size = config.model.image_size // config.model.latent_downsample
            z_T = torch.randn((config.model.latent_channels, size, size), generator=g)
            ts = schedule.sampling_timesteps(config.pipeline.t2i_steps)
            z0 = sample(models.image_net, LatentCode(z_T, ts[0]), cond,
                        config.pipeline.t2i_steps, schedule, omega=config.texgen.omega)
            with torch.no_grad():
                image = models.ae.decode_diffuse(z0.values)
            meshio.write_png8(out_dir / "I.png", image.numpy())

    with _phase(timings, "dce"):
        if mask_path is not None:
            labels = meshio.read_mask_png(mask_path)
            mask = segment(image.numpy(), "provided_file", mask_labels=labels)
            manifest.input_hashes["mask"] = hash_file(mask_path)
        else:
            k = auto_mask_k or config.delight.auto_mask_k
            mask = segment(image.numpy(), "color_quantize", k=k,
                           seed=derive_seed(config.seed, "auto-mask"))
        meshio.write_mask_png(out_dir / "mask.png", mask.labels)
        if skip_dce:
            image_d = image.numpy().astype(np.float32)
        else:
            result = delight(image, mask, models.image_net, models.ae, schedule,
                             delight_config(config))
            image_d = result.image_d
        meshio.write_png8(out_dir / "I_d.png", image_d)

    with _phase(timings, "mesh"):
        mesh_params = None
        if mesh_params_path is not None:
            mesh_params = json.loads(Path(mesh_params_path).read_text())
            manifest.input_hashes["mesh_params"] = hash_file(mesh_params_path)
        landmarks = None
        if landmarks_path is not None:
            landmarks = np.asarray(json.loads(Path(landmarks_path).read_text())["points"])
            manifest.input_hashes["landmarks"] = hash_file(landmarks_path)
        mesh, camera, params = _resolve_mesh(models, config, mesh_params, landmarks)
        meshio.export_obj(mesh, out_dir / "mesh.obj")
        (out_dir / "head_params.json").write_text(json.dumps(params, indent=1, sort_keys=True))
        (out_dir / "camera.json").write_text(
            json.dumps(camera.to_dict(), indent=1, sort_keys=True))

    with _phase(timings, "agt"):
        tex_cfg = texgen_config(config)
        size = config.synth.tex_size
        result = generate_textures(image_d, mesh, camera, uv_cond, models.texture_net,
                                   models.ae, models.decoders, models.perceptual,
                                   schedule, tex_cfg, seed=derive_seed(config.seed, "agt"),
                                   tex_size=(size, size), decode=False)
        np.save(out_dir / "z0.npy", result.z0.numpy())
        np.savez(out_dir / "visibility.npz", uv=result.visibility.uv_mask,
                 image=result.visibility.image_mask, latent=result.visibility.latent_mask)
        meshio.write_png8(out_dir / "I_m.png", result.partial_texture.values)

    with _phase(timings, "decode"):
        pbr = decode_pbr_set(models.ae, models.decoders, result.z0)
        _write_pbr(out_dir, pbr)

    with _phase(timings, "relight"):
        _write_previews(out_dir, config, mesh, pbr, camera)

    manifest.seeds.update({"agt": derive_seed(config.seed, "agt"),
                           "t2i": derive_seed(config.seed, "t2i")})
    manifest.timings = timings
    manifest.record_outputs(out_dir)
    manifest.write(out_dir)
    return out_dir


def _write_pbr(out_dir: Path, pbr: PbrTextureSet) -> None:
    meshio.write_texture(out_dir / "diffuse", pbr.diffuse, bits=8)
    meshio.write_texture(out_dir / "normal", pbr.normal, bits=16)
    meshio.write_texture(out_dir / "specular", pbr.specular, bits=16)
    meshio.write_texture(out_dir / "roughness", pbr.roughness, bits=16)


def _write_previews(out_dir: Path, config: ExperimentConfig, mesh: Mesh,
                    pbr: PbrTextureSet, camera: Camera) -> None:
    rigs = builtin_rigs()
    for name in config.pipeline.preview_rigs:
        img = relight(mesh, pbr, rigs[name], camera)
        meshio.write_png8(out_dir / f"relight_{name}.png", img)


# -- edit / relight ----------------------------------------------------------


def _load_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    needed = ["z0.npy", "I_d.png", "mesh.obj", "camera.json"]
    for name in needed:
        if not (run_dir / name).exists():
            raise MissingArtifactError(run_dir / name, "not a complete run directory")
    return {
        "z0": torch.from_numpy(np.load(run_dir / "z0.npy")),
        "image_d": meshio.read_png(run_dir / "I_d.png"),
        "mesh": meshio.import_obj(run_dir / "mesh.obj"),
        "camera": Camera.from_dict(json.loads((run_dir / "camera.json").read_text())),
    }


def cmd_edit(config: ExperimentConfig, run_dir, prompt: str, out_dir,
             models: Models | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if models is None:
        models = load_models(config)
    run = _load_run(run_dir)
    timings: dict = {}
    manifest = RunManifest(config_fingerprint=config.fingerprint(),
                           arch_fingerprint=config.arch_fingerprint(),
                           seeds={"master": config.seed},
                           extra={"edit_prompt": prompt, "source_run": str(run_dir)})
    edit_cond = models.vocab.parse_prompt(prompt, uv_mode=True)
    with _phase(timings, "agt"):
        result = edit_textures(run["z0"], edit_cond, run["image_d"], run["mesh"],
                               run["camera"], models.texture_net, models.ae,
                               models.decoders, models.perceptual, models.schedule,
                               texgen_config(config), seed=derive_seed(config.seed, "edit"))
        np.save(out_dir / "z0.npy", result.z0.numpy())
    with _phase(timings, "decode"):
        _write_pbr(out_dir, result.pbr)
    with _phase(timings, "relight"):
        _write_previews(out_dir, config, run["mesh"], result.pbr, run["camera"])
    meshio.export_obj(run["mesh"], out_dir / "mesh.obj")
    (out_dir / "camera.json").write_text(
        json.dumps(run["camera"].to_dict(), indent=1, sort_keys=True))
    meshio.write_png8(out_dir / "I_d.png", run["image_d"])
    manifest.timings = timings
    manifest.record_outputs(out_dir)
    manifest.write(out_dir)
    return out_dir


def cmd_relight(config: ExperimentConfig, run_dir, rig_path, out_dir) -> list:
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pbr = _load_pbr(run_dir)
    mesh = meshio.import_obj(run_dir / "mesh.obj")
    camera = Camera.from_dict(json.loads((run_dir / "camera.json").read_text()))
    spec = json.loads(Path(rig_path).read_text())
    rigs = spec if isinstance(spec, list) else [spec]
    written = []
    for i, rd in enumerate(rigs):
        rig = LightRig.from_dict(rd)
        img = relight(mesh, pbr, rig, camera)
        p = out_dir / f"relight_{i:02d}.png"
        meshio.write_png8(p, img)
        written.append(p)
    return written


def _load_pbr(run_dir: Path) -> PbrTextureSet:
    maps = {}
    for name in ("diffuse", "normal", "specular", "roughness"):
        npy = run_dir / f"{name}.npy"
        if not npy.exists():
            raise MissingArtifactError(npy, "PBR map")
        maps[name] = UvTexture(np.load(npy))
    return PbrTextureSet(**maps)
