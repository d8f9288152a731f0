"""CMake-driven extension build.

The pybind11 module is produced by the same CMakeLists.txt that builds the
library and CLI; this shim only tells setuptools where the resulting shared
object belongs. Metadata lives in pyproject.toml.
"""

import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).resolve().parent
        out_path = Path(self.get_ext_fullpath(ext.name)).resolve()
        out_path.parent.mkdir(parents=True, exist_ok=True)
        build_dir = Path(self.build_temp).resolve() / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)

        configure = [
            "cmake",
            "-S", str(source_dir),
            "-B", str(build_dir),
            f"-DCMAKE_BUILD_TYPE={'Debug' if self.debug else 'Release'}",
            "-DCOLLABDIFF_BUILD_TESTS=OFF",
            "-DCOLLABDIFF_BUILD_PYTHON=ON",
            f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={out_path.parent}",
            f"-DPython3_EXECUTABLE={sys.executable}",
        ]
        try:
            import pybind11

            configure.append(f"-Dpybind11_DIR={pybind11.get_cmake_dir()}")
        except ImportError:
            pass  # fall back to a system-wide pybind11 CMake config

        subprocess.run(configure, check=True)
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_core", "-j"],
            check=True,
        )
        if not out_path.exists():
            built = sorted(build_dir.rglob("_core*.so"))
            if not built:
                raise RuntimeError("CMake did not produce the _core module")
            shutil.copy2(built[0], out_path)


setup(
    ext_modules=[CMakeExtension("collabdiff._core")],
    cmdclass={"build_ext": CMakeBuild},
)
