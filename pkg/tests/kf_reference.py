"""Dense-matrix constant-velocity Kalman filter used as a test oracle.

Written from the textbook equations with explicit matrix inverses and no
shared code with the package.
"""

import math

import numpy as np

F = np.block([[np.eye(3), np.eye(3)], [np.zeros((3, 3)), np.eye(3)]])
H = np.hstack([np.zeros((3, 3)), np.eye(3)])


def wrap(a):
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def ref_predict(x, P, Q):
    x = F.dot(x)
    x[2] = wrap(x[2])
    return x, F.dot(P).dot(F.T) + Q


def ref_update(x, P, z, R):
    y = np.asarray(z, dtype=float) - H.dot(x)
    y[2] = wrap(y[2])
    S = H.dot(P).dot(H.T) + R
    K = P.dot(H.T).dot(np.linalg.inv(S))
    x = x + K.dot(y)
    x[2] = wrap(x[2])
    P = (np.eye(6) - K.dot(H)).dot(P)
    return x, 0.5 * (P + P.T)


def joseph_update(P, R):
    S = H.dot(P).dot(H.T) + R
    K = P.dot(H.T).dot(np.linalg.inv(S))
    A = np.eye(6) - K.dot(H)
    return A.dot(P).dot(A.T) + K.dot(R).dot(K.T)


def random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T / n + 0.1 * np.eye(n))
