#!/usr/bin/env python3
"""
Bootstrap a local geocert checkout: virtualenv, dependencies, .env and a golden self-check
"""

import os
import shutil
import subprocess
import sys
from pathlib import Path

GOLDEN_COUNTS = "z = [4, 2, 4, 2, 1, 2, 4, 2, 4]"
VENV = Path("venv")


def venv_tool(name: str) -> str:
    """Path of an executable inside the project virtualenv."""
    if os.name == 'nt':
        return str(VENV / "Scripts" / name)
    return str(VENV / "bin" / name)


def step(args, label):
    """Run one setup step; returns its stdout, or None when it failed."""
    print(f"\n🔧 {label}...")
    completed = subprocess.run(args, capture_output=True, text=True)
    if completed.returncode != 0:
        print(f"❌ {label} failed (exit {completed.returncode})")
        if completed.stderr:
            print(completed.stderr.strip())
        return None
    print(f"✅ {label}")
    return completed.stdout


def main():
    print("🚀 Setting up geocert")
    print("=" * 50)

    if sys.version_info < (3, 9):
        print("❌ Python 3.9 or higher is required")
        sys.exit(1)

    if VENV.exists():
        print("\n✅ Reusing existing virtual environment")
    elif step([sys.executable, "-m", "venv", str(VENV)], "Create virtual environment") is None:
        sys.exit(1)

    if step([venv_tool("pip"), "install", "-r", "requirements.txt"], "Install requirements") is None:
        sys.exit(1)

    if not Path(".env").exists() and Path(".env.example").exists():
        shutil.copy(".env.example", ".env")
        print("\n✅ Created .env from .env.example (set MNIST_DIR for the MNIST experiments)")

    output = step([venv_tool("python"), "main.py", "golden"], "Reproduce the 3x3 scaling example")
    if output is None or GOLDEN_COUNTS not in output:
        print("\n⚠️  Golden example did not reproduce; check the installation")
        sys.exit(1)

    print("\n🎉 Setup complete. Next:")
    print(f"  {venv_tool('pytest')} -m 'not slow'")
    print("  ./start.sh")


if __name__ == "__main__":
    main()
