import numpy as np
import pytest

from optoqml.corpus import Dataset

# Published descriptor rows: E, eps1, eps2, n, kappa, alpha
TABLE_ROWS = [
    (0.0063, 4.4968, 1.19e-6, 2.1206, 2.80e-7, 2.51e-11),
    (0.0106, 4.4947, 2.12e-6, 2.1201, 5.00e-7, 7.49e-11),
    (1.98, 4.1125, 3.41e-3, 2.0287, 8.42e-4, 1.87e-5),
    (2.53, 3.8841, 1.87e-2, 1.9724, 4.74e-3, 9.12e-4),
    (3.12, 3.2148, 4.62e-2, 1.7943, 1.29e-2, 2.63e-3),
    (6.14, 2.7846, 1.25e-1, 1.6129, 3.92e-2, 5.87e-3),
    (7.12, 2.5039, 8.74e-2, 1.5681, 2.91e-2, 4.11e-3),
    (9.96, 2.3412, 1.11e-2, 1.5310, 3.62e-3, 5.11e-4),
]

ACCEPTANCE_LINES = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def table_csv(tmp_path):
    path = tmp_path / "table.csv"
    lines = ["E_eV,eps1,eps2,n,kappa,alpha_cm1,label"]
    for i, row in enumerate(TABLE_ROWS):
        lines.append(",".join(repr(v) for v in row) + f",{int(i >= 4)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def blobs(n=200, d=3, sep=3.0, seed=0):
    """Two Gaussian clouds separated along the first axis, labels 0/1."""
    r = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = r.normal(size=(n, d))
    X[:, 0] += np.where(y == 1, sep / 2, -sep / 2)
    return X, y


def make_dataset(X, y, names=None):
    names = names or [f"f{j}" for j in range(X.shape[1])]
    return Dataset(names, X, y)
