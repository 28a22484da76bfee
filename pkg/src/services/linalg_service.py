import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack

from src.core.config import settings
from src.core.errors import CapacityError, ContractError, ModelFormatError, NumericalError
from src.core.logging import logger
from src.schemas.analysis import SpectrumReport
from src.schemas.interactions import InteractionMatrix

DENSE_MAGIC = b"LARE"
DENSE_VERSION = 1
DENSE_HEADER = struct.Struct("<4sHHII")

SYMMETRY_TOL = 1e-10


class LinalgService:
    """Dense symmetric linear algebra: gram accumulation, SPD solves and eigensolves"""

    @staticmethod
    def gram(
        X: InteractionMatrix,
        user_weights: Optional[np.ndarray] = None,
        threads: int = 1,
        cap: Optional[int] = None,
    ) -> np.ndarray:
        """
        Item gram X^T diag(w) X as a dense, exactly symmetric matrix.

        Args:
            X: Interaction matrix (m x n)
            user_weights: Optional non-negative weight per user
            threads: Number of user chunks accumulated in parallel
            cap: Item cap; defaults to settings.DENSE_ITEM_CAP

        Returns:
            Dense n x n float64 array

        Raises:
            CapacityError: If n exceeds the cap
            ContractError: If the weights are malformed
        """
        cap = settings.DENSE_ITEM_CAP if cap is None else cap
        if X.cols > cap:
            raise CapacityError("gram", X.cols, cap)

        csr = X.matrix.astype(np.float64)
        if user_weights is not None:
            user_weights = np.asarray(user_weights, dtype=np.float64)
            if user_weights.shape != (X.rows,):
                raise ContractError(f"user_weights must have length {X.rows}")
            if not np.all(np.isfinite(user_weights)) or np.any(user_weights < 0):
                raise ContractError("user_weights must be finite and non-negative")
            weighted = sp.diags(user_weights) @ csr
        else:
            weighted = csr

        chunks = max(1, min(int(threads), X.rows))
        if chunks == 1:
            P = (csr.T @ weighted).toarray()
        else:
            bounds = np.linspace(0, X.rows, chunks + 1).astype(np.int64)

            def partial(k: int) -> np.ndarray:
                lo, hi = bounds[k], bounds[k + 1]
                return (csr[lo:hi].T @ weighted[lo:hi]).toarray()

            with ThreadPoolExecutor(max_workers=chunks) as pool:
                parts = list(pool.map(partial, range(chunks)))
            # Summed in chunk order so the result does not depend on scheduling
            P = parts[0]
            for part in parts[1:]:
                P += part

        return LinalgService.symmetrize_upper(P)

    @staticmethod
    def symmetrize_upper(A: np.ndarray) -> np.ndarray:
        """Mirror the upper triangle onto the lower one (bitwise symmetric result)"""
        return np.triu(A) + np.triu(A, 1).T

    @staticmethod
    def check_symmetric(A: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
        """
        Raises:
            ContractError: If A is not square or not symmetric within tol (relative to max |A|)
        """
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractError(f"expected a square matrix, got shape {A.shape}")
        scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
        asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
        if asym > tol * scale:
            raise ContractError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")

    @staticmethod
    def cholesky(A: np.ndarray) -> np.ndarray:
        """
        Upper Cholesky factor of a symmetric positive-definite matrix.

        Raises:
            ContractError: If A is not symmetric
            NumericalError: If A is not positive definite; `pivot` is the 0-based failing index
        """
        LinalgService.check_symmetric(A)
        factor, info = lapack.dpotrf(np.asarray(A, dtype=np.float64), lower=0, clean=1, overwrite_a=0)
        if info > 0:
            raise NumericalError(
                f"Cholesky factorization failed: leading minor at pivot {info - 1} is not positive definite",
                pivot=info - 1,
            )
        if info < 0:
            raise NumericalError(f"Cholesky factorization rejected argument {-info}")
        return factor

    @staticmethod
    def solve_spd(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """
        Solve A X = rhs for symmetric positive-definite A.

        Args:
            A: n x n symmetric positive-definite matrix
            rhs: n x k right-hand side (or a length-n vector)

        Returns:
            Solution with the shape of rhs

        Raises:
            ContractError: If A is not symmetric or shapes disagree
            NumericalError: If the factorization fails or the solution is not finite
        """
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != A.shape[0]:
            raise ContractError(f"rhs has {rhs.shape[0]} rows, expected {A.shape[0]}")
        factor = LinalgService.cholesky(A)
        solution = sla.cho_solve((factor, False), rhs, check_finite=False)
        if not np.all(np.isfinite(solution)):
            raise NumericalError("SPD solve produced non-finite values")
        return solution

    @staticmethod
    def inverse_spd(A: np.ndarray) -> np.ndarray:
        """Inverse of a symmetric positive-definite matrix"""
        return LinalgService.solve_spd(A, np.eye(A.shape[0]))

    @staticmethod
    def relative_residual(A: np.ndarray, solution: np.ndarray, rhs: np.ndarray) -> float:
        """||A X - rhs||_F / ||rhs||_F (0 for a zero rhs with a zero residual)"""
        denom = float(np.linalg.norm(rhs))
        num = float(np.linalg.norm(A @ solution - rhs))
        if denom == 0.0:
            return num
        return num / denom

    @staticmethod
    def eig_sym(A: np.ndarray, source: str = "matrix", cap: Optional[int] = None) -> SpectrumReport:
        """
        Full spectrum of a symmetric matrix, sorted descending.

        Raises:
            CapacityError: If n exceeds settings.EIGEN_ITEM_CAP
            ContractError: If A is not symmetric
        """
        report, _ = LinalgService._eigh(A, source, cap, vectors=False)
        return report

    @staticmethod
    def eig_sym_decompose(
        A: np.ndarray, source: str = "matrix", cap: Optional[int] = None
    ) -> Tuple[SpectrumReport, np.ndarray]:
        """Spectrum plus eigenvectors (columns, same order as the eigenvalues)"""
        report, vectors = LinalgService._eigh(A, source, cap, vectors=True)
        return report, vectors  # type: ignore[return-value]

    @staticmethod
    def _eigh(A: np.ndarray, source: str, cap: Optional[int], vectors: bool):
        cap = settings.EIGEN_ITEM_CAP if cap is None else cap
        if A.shape[0] > cap:
            raise CapacityError("eig_sym", A.shape[0], cap)
        LinalgService.check_symmetric(A)
        if vectors:
            w, V = sla.eigh(A)
            return SpectrumReport(eigenvalues=w[::-1].copy(), source=source), V[:, ::-1].copy()
        w = sla.eigh(A, eigvals_only=True)
        return SpectrumReport(eigenvalues=w[::-1].copy(), source=source), None

    @staticmethod
    def eig_general(A: np.ndarray, source: str = "matrix", cap: Optional[int] = None) -> SpectrumReport:
        """
        Spectrum of a small non-symmetric matrix known to be similar to a symmetric one.

        Eigenvalues are returned as real parts sorted descending.

        Raises:
            CapacityError: If n exceeds settings.GENERAL_EIGEN_CAP
            NumericalError: If the spectrum has a significant imaginary part
        """
        cap = settings.GENERAL_EIGEN_CAP if cap is None else cap
        if A.shape[0] > cap:
            raise CapacityError("eig_general", A.shape[0], cap)
        w = sla.eigvals(A)
        scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
        if w.size and float(np.max(np.abs(w.imag))) > 1e-8 * scale:
            raise NumericalError(f"{source} has a complex spectrum")
        return SpectrumReport(eigenvalues=np.sort(w.real)[::-1].copy(), source=source)

    @staticmethod
    def write_dense(A: np.ndarray, path: Path) -> None:
        """Write a matrix as a LARE binary file (16-byte header + little-endian f64)"""
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise ContractError("only 2-D matrices can be written")
        if not np.all(np.isfinite(A)):
            raise ContractError("matrix contains non-finite entries")
        rows, cols = A.shape
        with Path(path).open("wb") as fh:
            fh.write(DENSE_HEADER.pack(DENSE_MAGIC, DENSE_VERSION, 0, rows, cols))
            fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes(order="C"))
        logger.debug("Wrote %dx%d dense matrix to %s", rows, cols, path)

    @staticmethod
    def read_dense(path: Path) -> np.ndarray:
        """
        Read a LARE binary matrix.

        Raises:
            ModelFormatError: Wrong magic or version, or a truncated payload
        """
        data = Path(path).read_bytes()
        if len(data) < DENSE_HEADER.size:
            raise ModelFormatError(f"{path}: truncated header")
        magic, version, _, rows, cols = DENSE_HEADER.unpack_from(data)
        if magic != DENSE_MAGIC:
            raise ModelFormatError(f"{path}: bad magic {magic!r}")
        if version != DENSE_VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        expected = DENSE_HEADER.size + rows * cols * 8
        if len(data) != expected:
            raise ModelFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
        payload = np.frombuffer(data, dtype="<f8", offset=DENSE_HEADER.size, count=rows * cols)
        return payload.astype(np.float64).reshape(rows, cols)
