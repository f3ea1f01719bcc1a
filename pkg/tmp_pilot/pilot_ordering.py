"""Pilot for the ordering experiment: small step budget first."""
import sys, time
from pathlib import Path
from voxelsr.kspace import DegradeSpec
from voxelsr.patches import PatchSpec
from voxelsr.training import (DatasetManifest, ManifestEntry, TrainConfig,
                              evaluate_model, save_manifest, train, load_manifest)
from voxelsr.volume import PhantomSpec, make_phantom, save_volume

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("tmp_pilot/run")
out.mkdir(parents=True, exist_ok=True)

# 20 phantoms 64^3: 13 train, 2 validation, 5 test
entries = []
for i in range(20):
    name = f"ph_{i:03d}"
    if not (out / f"{name}.vol").exists():
        save_volume(make_phantom(PhantomSpec(dims=(64, 64, 64), seed=1000 + i)), out / name)
    split = "train" if i < 13 else ("validation" if i < 15 else "test")
    entries.append(ManifestEntry(name, f"{name}.vol", split))
manifest_path = out / "manifest.csv"
save_manifest(DatasetManifest(entries=entries), manifest_path)

spec = DegradeSpec(factors=(2, 2, 1))
patch = PatchSpec(cube_size=16, stride=8)
common = dict(lr=1e-3, batch_cubes=2, max_steps=steps, validate_every=max(50, steps // 10),
              seed=0, manifest=str(manifest_path), out_dir=str(out), cube_size=16,
              factors=(2, 2, 1), val_cubes_per_volume=8)

ckpts = {}
for arch, extra in [("dcsrn", dict(growth_rate=8)),
                    ("fsrcnn3d", dict(fsrcnn_d=32, fsrcnn_s=5, fsrcnn_m=1)),
                    ("fsrcnn2d", dict(fsrcnn_d=32, fsrcnn_s=5, fsrcnn_m=1))]:
    t0 = time.perf_counter()
    r = train(TrainConfig(arch=arch, **extra, **common))
    print(f"{arch}: {time.perf_counter()-t0:.0f}s, loss {r.initial_train_loss:.5f} -> "
          f"{r.final_train_loss:.5f}, best val {r.best_val_loss:.5f}", flush=True)
    ckpts[arch] = str(r.checkpoint_path)

methods = ["nearest", "tricubic", "lr-identity", ckpts["dcsrn"], ckpts["fsrcnn3d"], ckpts["fsrcnn2d"]]
labels = ["nearest", "tricubic", "lr-identity", "dcsrn", "fsrcnn3d", "fsrcnn2d"]
man = load_manifest(manifest_path)
for label, method in zip(labels, methods):
    t0 = time.perf_counter()
    rep = evaluate_model(method, man, "test", spec, patch)
    s = rep.summary
    print(f"{label:12s} ssim {s['ssim']['mean']:.4f}  psnr {s['psnr']['mean']:7.2f}  "
          f"nrmse {s['nrmse']['mean']:.4f}   ({time.perf_counter()-t0:.0f}s)", flush=True)
