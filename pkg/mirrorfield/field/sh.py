"""Real spherical harmonics up to degree 2, in the sign convention used by the
plenoxel family of grid renderers."""
import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)


def shBasis(dirs: np.ndarray, shDegree: int) -> np.ndarray:
    """Evaluate the basis functions at unit directions

    Args:
        dirs (np.ndarray): (P, 3) unit directions
        shDegree (int): Degree in [0, 2]

    Returns:
        np.ndarray: (P, (shDegree + 1)**2) basis values

    Example:
      >>> import numpy as np
      >>> shBasis(np.array([[0.0, 0.0, 1.0]]), 1).round(6).tolist()
      [[0.282095, -0.0, 0.488603, -0.0]]
    """
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    columns = [np.full_like(x, C0)]
    if shDegree >= 1:
        columns += [-C1 * y, C1 * z, -C1 * x]
    if shDegree >= 2:
        columns += [
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * z * z - x * x - y * y),
            C2[3] * x * z,
            C2[4] * (x * x - y * y),
        ]
    return np.stack(columns, axis=1)


def shBasisGrad(dirs: np.ndarray, shDegree: int) -> np.ndarray:
    """Derivative of every basis function with respect to the three direction
    components (the polynomial form, without projecting onto the sphere)

    Returns:
        np.ndarray: (P, K, 3)
    """
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    rows = [(zero, zero, zero)]
    if shDegree >= 1:
        rows += [
            (zero, -C1 * one, zero),
            (zero, zero, C1 * one),
            (-C1 * one, zero, zero),
        ]
    if shDegree >= 2:
        rows += [
            (C2[0] * y, C2[0] * x, zero),
            (zero, C2[1] * z, C2[1] * y),
            (-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z),
            (C2[3] * z, zero, C2[3] * x),
            (2.0 * C2[4] * x, -2.0 * C2[4] * y, zero),
        ]
    return np.stack([np.stack(row, axis=1) for row in rows], axis=1)
