"""Smoke test for the `irp` Python module.

Builds the extension (unless IRP_PY_LIB points at a built library), loads it
from a temporary directory and exercises the main entry points on a tiny
generated dataset.

    python3 python/smoke_test.py
"""

import importlib.util
import os
import shutil
import subprocess
import sys
import sysconfig
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build_library():
    lib = os.environ.get("IRP_PY_LIB")
    if lib:
        return lib
    subprocess.run(
        ["cargo", "build", "--release", "-p", "irp-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = os.environ.get("CARGO_TARGET_DIR", os.path.join(ROOT, "target"))
    for name in ("libirp_py.so", "libirp_py.dylib", "irp_py.dll"):
        path = os.path.join(target, "release", name)
        if os.path.exists(path):
            return path
    sys.exit("built library not found under " + target)


def load(lib, tmp):
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    dest = os.path.join(tmp, "irp" + suffix)
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("irp", dest)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    with tempfile.TemporaryDirectory() as tmp:
        irp = load(build_library(), tmp)
        print("irp", irp.__version__)

        ds = irp.Dataset.generate("rope", seed=3, param_dims=(4, 4), action_dims=[3, 3, 3])
        assert ds.task == "rope" and ds.n_params == 16 and ds.n_actions == 27, ds
        path = os.path.join(tmp, "rope.irpd")
        ds.save(path)
        again = irp.Dataset.load(path)
        assert again.hash() == ds.hash()
        print(ds, ds.hash()[:12])

        cell = ds.cells("test_interp")[0]
        goal = ds.goals(cell, 1, seed=1)[0]
        assert len(goal) == 1

        plant = irp.Plant(ds, cell, seed=5)
        traj = plant.execute(ds.action(13))
        assert len(traj) == 1 and len(traj[0]) > 10
        d = irp.distance(traj, goal)
        assert d >= 0.0

        img = irp.rasterize(traj)
        assert irp.chamfer(img[0], img[0]) == 0.0

        knn = irp.KnnPredictor(ds)
        preds = knn.predict_distances(traj, [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]], goal)
        assert len(preds) == 2 and all(p >= 0.0 for p in preds)

        ep = irp.run_episode(ds, cell, goal, method="irp", predictor=knn, max_step=4, d_stop=0.0, seed=2)
        assert len(ep.distances) == 4 and ep.stop == "max_step", ep
        print("irp distances:", ["%.4f" % x for x in ep.distances])
        assert min(ep.distances) <= ds.best_distance(cell, goal) + 0.05

        try:
            irp.Plant(ds, 999)
        except ValueError as e:
            print("rejected:", e)
        else:
            raise AssertionError("out-of-range cell accepted")
        try:
            irp.Dataset.load(os.path.join(tmp, "missing.irpd"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
