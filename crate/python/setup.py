import pathlib
import shutil
import subprocess

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = pathlib.Path(__file__).resolve().parent.parent


class CargoBuild(build_ext):
    """Build the Rust extension with cargo and copy the cdylib in place."""

    def build_extension(self, ext):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "selsieve-py"],
            cwd=ROOT,
            check=True,
        )
        src = ROOT / "target" / "release" / "lib_native.so"
        dest = pathlib.Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(src, dest)


setup(
    name="selsieve",
    version="0.1.0",
    description="Two-step sieve estimation of multilayered sample-selection models",
    packages=["selsieve"],
    ext_modules=[Extension("selsieve._native", sources=[])],
    cmdclass={"build_ext": CargoBuild},
    zip_safe=False,
    python_requires=">=3.9",
)
