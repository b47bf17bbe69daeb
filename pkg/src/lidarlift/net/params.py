"""Parameter initialization, the structural manifest, and checkpoint archives.

Every layer registers a manifest record (kind, kernel, dilation, bias
flag, normalization flag, path). The manifest is the auditable source of
truth for the structural constraints: no normalization layer exists
anywhere, and no 3-D convolution in the completion path carries a bias.
Checkpoint archives embed the manifest and are byte-identical across
repeated saves of the same state.
"""

import io
import json
import zipfile

import numpy as np

from . import config as cfg_mod
from .autodiff import Var
from .config import DenoiserConfig

# fixed timestamp so archives are deterministic
_EPOCH = (1980, 1, 1, 0, 0, 0)


class ParamBuilder:
    def __init__(self, seed):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.params = {}
        self.manifest = []

    def linear(self, name, fan_in, fan_out, bias=True, path="", gain=1.0):
        w = self.rng.standard_normal((fan_in, fan_out)) * gain * np.sqrt(2.0 / fan_in)
        self.params[f"{name}.w"] = Var(w)
        if bias:
            self.params[f"{name}.b"] = Var(np.zeros(fan_out))
        self.manifest.append(
            {
                "name": name,
                "kind": "linear",
                "kernel": None,
                "dilation": None,
                "bias": bool(bias),
                "normalization": False,
                "path": path,
                "shape": [fan_in, fan_out],
            }
        )

    def conv(self, name, ndim, c_in, c_out, kernel, dilation, path, gain=1.0):
        shape = (c_out, c_in) + (kernel,) * ndim
        fan_in = c_in * kernel**ndim
        w = self.rng.standard_normal(shape) * gain * np.sqrt(1.0 / fan_in)
        self.params[f"{name}.w"] = Var(w)
        self.manifest.append(
            {
                "name": name,
                "kind": f"conv{ndim}d",
                "kernel": [kernel] * ndim,
                "dilation": dilation,
                "bias": False,
                "normalization": False,
                "path": path,
                "shape": list(shape),
            }
        )


def init_params(config: DenoiserConfig, seed):
    """Create all weights plus the structural manifest."""
    b = ParamBuilder(seed)
    cv = config.voxel_channels

    # per-point init features: (offset, coords, t_emb) -> C_v
    b.linear("init.fc1", 6 + config.time_embed_dim, cv, path=cfg_mod.PATH_INIT)
    b.linear("init.fc2", cv, cv, path=cfg_mod.PATH_INIT)

    # voxel completion: stem + three multi-path residual units
    b.conv("completion.stem", 3, cv, cv, config.stem_kernel, 1, cfg_mod.PATH_COMPLETION)
    for u in range(3):
        for j, (k, d) in enumerate(zip(config.mprb_kernels, config.mprb_dilations)):
            b.conv(f"completion.mprb{u}.conv{j}", 3, cv, cv, k, d, cfg_mod.PATH_COMPLETION)
        b.conv(f"completion.mprb{u}.proj", 3, 3 * cv, cv, 1, 1, cfg_mod.PATH_COMPLETION)

    # planar refiner over the folded z axis
    folded = cv * config.grid.resolution[2]
    widths = [config.unet_width * 2**i for i in range(config.unet_depth)]
    prev = folded
    for i, w in enumerate(widths):
        b.conv(f"unet.enc{i}", 2, prev, w, 3, 1, cfg_mod.PATH_UNET)
        prev = w
    b.conv("unet.mid", 2, widths[-1], widths[-1], 3, 1, cfg_mod.PATH_UNET)
    up_in = widths[-1]
    for i in reversed(range(config.unet_depth)):
        b.conv(f"unet.dec{i}", 2, up_in + widths[i], widths[i], 3, 1, cfg_mod.PATH_UNET)
        up_in = widths[i]
    b.conv("unet.out", 2, widths[0], folded, 3, 1, cfg_mod.PATH_UNET)

    # condition encoder: 4 residual blocks with increasing widths
    prev = 3
    for i, w in enumerate(config.cond_channels):
        b.linear(f"cond.block{i}.fc1", prev, w, path=cfg_mod.PATH_CONDITION)
        b.linear(f"cond.block{i}.fc2", w, w, path=cfg_mod.PATH_CONDITION)
        b.linear(f"cond.block{i}.skip", prev, w, bias=False, path=cfg_mod.PATH_CONDITION)
        prev = w

    # match refinement is bias-free so a null (all-zero) condition yields
    # an exactly zero match block
    b.linear("match.fc1", config.cond_channels[-1], config.match_dim, bias=False, path=cfg_mod.PATH_MATCH)
    b.linear("match.fc2", config.match_dim, config.match_dim, bias=False, path=cfg_mod.PATH_MATCH)

    # per-point coordinate features
    b.linear("points.fc1", 3, config.point_channels, path=cfg_mod.PATH_INTERACT)
    b.linear("points.fc2", config.point_channels, config.point_channels, path=cfg_mod.PATH_INTERACT)

    # hybrid-feature weights and the output head
    b.linear("interact.w1", config.hybrid_dim, config.interact_hidden, path=cfg_mod.PATH_INTERACT)
    b.linear("interact.w2", config.interact_hidden, cv, path=cfg_mod.PATH_INTERACT)
    b.linear("head.fc1", cv, config.head_hidden, path=cfg_mod.PATH_HEAD)
    # near-zero start: the untrained predictor should emit small noise
    b.linear("head.fc2", config.head_hidden, 3, path=cfg_mod.PATH_HEAD, gain=0.01)

    return b.params, b.manifest


def param_count(params) -> int:
    return sum(v.value.size for v in params.values())


def audit_manifest(manifest):
    """Check the structural constraints; returns a list of violations."""
    problems = []
    for rec in manifest:
        if rec["normalization"]:
            problems.append(f"{rec['name']}: normalization layer present")
        if rec["kind"] == "conv3d" and rec["path"] == cfg_mod.PATH_COMPLETION and rec["bias"]:
            problems.append(f"{rec['name']}: biased 3-D convolution in the completion path")
    return problems


def zero_grads(params):
    for v in params.values():
        v.grad = None


# -- deterministic checkpoint archives ---------------------------------------

def _npy_bytes(arr):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), version=(1, 0))
    return buf.getvalue()


def save_archive(path, arrays: dict, manifest, extra: dict):
    """Write arrays + manifest + metadata as a reproducible zip archive."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:

        def put(name, data):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            zf.writestr(info, data)

        put("manifest.json", json.dumps(manifest, sort_keys=True, indent=1))
        put("extra.json", json.dumps(extra, sort_keys=True, indent=1))
        for name in sorted(arrays):
            put(f"arrays/{name}.npy", _npy_bytes(arrays[name]))


def load_archive(path):
    """Read back (arrays, manifest, extra) from :func:`save_archive` output."""
    arrays = {}
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        extra = json.loads(zf.read("extra.json"))
        for info in zf.infolist():
            if info.filename.startswith("arrays/") and info.filename.endswith(".npy"):
                name = info.filename[len("arrays/") : -len(".npy")]
                arrays[name] = np.lib.format.read_array(io.BytesIO(zf.read(info)))
    return arrays, manifest, extra
