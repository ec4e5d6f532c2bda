"""
Cross-platform runner for the full latency study.

Usage:
  python run_pipeline.py            # presets + fast tests
  python run_pipeline.py --slow     # also the acceptance-scale tests

This script:
- creates a local virtual environment in `.venv` if missing
- installs `requirements.txt` into the venv
- regenerates the latency presets of config/config.yaml, then runs the tests
- stops on the first failing step
"""
from pathlib import Path
import sys
import subprocess
import venv
import os

ROOT = Path(__file__).parent.resolve()
VENV_DIR = ROOT / ".venv"
PRESETS = [
    "bec_pe",
    "bec_capacity",
    "bawgnc_pe",
    "bawgnc_capacity",
    "bsc_pe",
    "bsc_capacity",
    "fastssc_bec",
    "fastssc_bawgnc",
    "fastssc_bsc",
]


def create_venv():
    if not VENV_DIR.exists():
        print("Creating virtual environment at .venv...")
        venv.create(VENV_DIR, with_pip=True)
    py = VENV_DIR / ("Scripts" if os.name == 'nt' else "bin") / ("python.exe" if os.name == 'nt' else "python")
    if not py.exists():
        raise RuntimeError(f"Python executable not found in venv at {py}")
    return str(py)


def run(cmd, env=None):
    print(f"\n>>> Running: {' '.join(cmd)}")
    completed = subprocess.run(cmd, cwd=ROOT, env=env)
    if completed.returncode != 0:
        raise SystemExit(completed.returncode)


def main(argv):
    py = create_venv()

    print("Installing requirements...")
    run([py, "-m", "pip", "install", "-r", "requirements.txt"])

    run([py, "-m", "polar", "schedule", "--n", "3", "--frozen", "1,2,3,5", "--compact"])
    for name in PRESETS:
        run([py, "-m", "polar", "latency", "--preset", name])
    run([py, "-m", "polar", "simulate", "--family", "bec", "--capacity", "0.5",
         "--pe", "1e-3", "--n", "8"])

    tests = [py, "-m", "pytest", "-q"]
    if "--slow" in argv:
        tests += ["-m", "slow or not slow"]
    run(tests)

    print("\nPipeline completed successfully.")


if __name__ == '__main__':
    try:
        main(sys.argv[1:])
    except SystemExit as e:
        code = int(e.code) if e.code is not None else 1
        print(f"Pipeline failed with exit code {code}")
        sys.exit(code)
    except Exception as exc:
        print(f"Error running pipeline: {exc}")
        sys.exit(1)
