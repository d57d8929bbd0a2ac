from importlib import resources

import numpy as np
import pytest

from semlift import frontend, sigma_spl

MUTANTS = (
    "fft_sign_mutant.c",
    "fft_butterfly_sign_mutant.c",
    "fft_gather_offset_mutant.c",
    "fft_scatter_swap_mutant.c",
    "fft_operand_swap_mutant.c",
    "fft_twiddle_trig_mutant.c",
    "fft_guard_mutant.c",
    "fft_call_target_mutant.c",
)


def corpus_path(name: str) -> str:
    return str(resources.files("semlift").joinpath("corpus").joinpath(name))


def corpus_text(name: str) -> str:
    return resources.files("semlift").joinpath("corpus").joinpath(name).read_text(encoding="utf-8")


def lower(text: str, entry=None):
    unit = frontend.parse_kernel_source(text)
    return frontend.lower_to_icode(unit, entry)


def dft_reference(n: int) -> np.ndarray:
    # numpy's FFT applied to the identity: independent of the package
    return np.fft.fft(np.eye(n), axis=0)


def interleaved(mat: np.ndarray) -> np.ndarray:
    """Real 2n x 2n form built directly from real/imag parts."""
    rows, cols = mat.shape
    out = np.zeros((2 * rows, 2 * cols))
    out[0::2, 0::2] = mat.real
    out[0::2, 1::2] = -mat.imag
    out[1::2, 0::2] = mat.imag
    out[1::2, 1::2] = mat.real
    return out


@pytest.fixture(scope="session")
def fft_source():
    return corpus_text("fft_recursive.c")


@pytest.fixture(scope="session")
def fft_program(fft_source):
    return lower(fft_source)


def stride_kernel(rng, perturb=None):
    """Random loop moving ``x`` into ``y`` by stride ``m``; ``perturb`` breaks it."""
    m = rng.choice([2, 4, 8, 16])
    kind = rng.choice(["gather", "scatter"])
    offs = list(range(m))
    if perturb == "perm":
        while offs == list(range(m)):
            rng.shuffle(offs)
    elif perturb == "dup":
        a, b = rng.sample(range(m), 2)
        offs[a] = offs[b]
    var = rng.choice(["i", "p", "q"])
    lines = []
    for j in range(m):
        contiguous = f"{var} + {j} * (n / {m})" if j else var
        strided = f"{m} * {var} + {offs[j]}" if offs[j] else f"{m} * {var}"
        lines.append(f"y[{contiguous}] = x[{strided}];" if kind == "gather" else f"y[{strided}] = x[{contiguous}];")
    rng.shuffle(lines)
    body = "\n        ".join(lines)
    src = f"void k(double* y, double* x, int n) {{\n    for (int {var} = 0; {var} < n / {m}; ++{var}) {{\n        {body}\n    }}\n}}\n"
    return m, kind, src


def stride_move(src, probes):
    program = lower(src)
    fn = program.function()
    return sigma_spl.lift_loop(fn.body[0], sigma_spl.range_analysis(program), fn.arrays, "n", probes)


def stride_reference(size, stride):
    # input i*stride + j goes to output j*(size/stride) + i
    return np.eye(size)[np.arange(size).reshape(size // stride, stride).T.reshape(-1)]
