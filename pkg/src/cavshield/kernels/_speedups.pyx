# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=False
"""Cython kernels: transliteration of cavshield.kernels.pure.

Operation order matches pure.py exactly so both backends produce identical
floats (the extension is built with -ffp-contract=off).  Keep in sync.
"""

from libc.math cimport atan, cos, fmod, sin, sqrt, tan, INFINITY, M_PI

BACKEND = "compiled"

DEF MAX_ROWS = 64

cdef double FEAS_TOL = 1e-8
cdef double DEDUP_TOL = 1e-12

QP_FEASIBLE = 1
QP_INFEASIBLE = 0


cdef bint _feasible(double x, double y, double* rax, double* ray,
                    double* rb, int n) noexcept:
    cdef int i
    for i in range(n):
        if rax[i] * x + ray[i] * y - rb[i] < -FEAS_TOL:
            return False
    return True


def solve_qp_2d(double u0x, double u0y, rows,
                double lo0, double hi0, double lo1, double hi1):
    """See cavshield.kernels.pure.solve_qp_2d."""
    cdef double rax[MAX_ROWS]
    cdef double ray[MAX_ROWS]
    cdef double rb[MAX_ROWS]
    cdef int n = 4
    cdef double ax, ay, b, nrm
    cdef int i, j
    cdef bint dup

    rax[0] = 1.0;  ray[0] = 0.0;  rb[0] = lo0
    rax[1] = -1.0; ray[1] = 0.0;  rb[1] = -hi0
    rax[2] = 0.0;  ray[2] = 1.0;  rb[2] = lo1
    rax[3] = 0.0;  ray[3] = -1.0; rb[3] = -hi1

    for row in rows:
        ax = row[0]
        ay = row[1]
        b = row[2]
        nrm = sqrt(ax * ax + ay * ay)
        if nrm < DEDUP_TOL:
            if b > FEAS_TOL:
                return (QP_INFEASIBLE, 0.0, 0.0, 0.0)
            continue
        ax = ax / nrm
        ay = ay / nrm
        b = b / nrm
        dup = False
        for i in range(n):
            if (abs(ax - rax[i]) <= DEDUP_TOL
                    and abs(ay - ray[i]) <= DEDUP_TOL
                    and abs(b - rb[i]) <= DEDUP_TOL):
                dup = True
                break
        if not dup:
            if n >= MAX_ROWS:
                raise ValueError("too many QP constraints")
            rax[n] = ax
            ray[n] = ay
            rb[n] = b
            n += 1

    if _feasible(u0x, u0y, rax, ray, rb, n):
        return (QP_FEASIBLE, u0x, u0y, 0.0)

    cdef double best_d2 = INFINITY
    cdef double best_x = 0.0
    cdef double best_y = 0.0
    cdef bint found = False
    cdef double t, cx, cy, d2, det

    for i in range(n):
        t = rb[i] - (rax[i] * u0x + ray[i] * u0y)
        cx = u0x + t * rax[i]
        cy = u0y + t * ray[i]
        if _feasible(cx, cy, rax, ray, rb, n):
            d2 = (cx - u0x) * (cx - u0x) + (cy - u0y) * (cy - u0y)
            if d2 < best_d2:
                best_d2 = d2
                best_x = cx
                best_y = cy
                found = True

    for i in range(n):
        for j in range(i + 1, n):
            det = rax[i] * ray[j] - ray[i] * rax[j]
            if abs(det) <= DEDUP_TOL:
                continue
            cx = (rb[i] * ray[j] - rb[j] * ray[i]) / det
            cy = (rax[i] * rb[j] - rax[j] * rb[i]) / det
            if _feasible(cx, cy, rax, ray, rb, n):
                d2 = (cx - u0x) * (cx - u0x) + (cy - u0y) * (cy - u0y)
                if d2 < best_d2:
                    best_d2 = d2
                    best_x = cx
                    best_y = cy
                    found = True

    if not found:
        return (QP_INFEASIBLE, 0.0, 0.0, 0.0)
    return (QP_FEASIBLE, best_x, best_y, 0.5 * best_d2)


cdef double _wrap_angle(double a) noexcept:
    a = fmod(a + M_PI, 2.0 * M_PI)
    if a <= 0.0:
        a += 2.0 * M_PI
    return a - M_PI


def wrap_angle(double a):
    """Wrap an angle to (-pi, pi]."""
    return _wrap_angle(a)


def step_bicycle(double x, double y, double v, double psi,
                 double accel, double steer, double dt,
                 double lr, double wheelbase):
    """See cavshield.kernels.pure.step_bicycle."""
    cdef double beta = atan((lr / wheelbase) * tan(steer))
    cdef double nx = x + v * cos(psi + beta) * dt
    cdef double ny = y + v * sin(psi + beta) * dt
    cdef double npsi = _wrap_angle(psi + (v / lr) * sin(beta) * dt)
    cdef double nv = v + accel * dt
    if nv < 0.0:
        nv = 0.0
    return (nx, ny, nv, npsi)


cdef void _corners(double x, double y, double c, double s,
                   double length, double width,
                   double* cx, double* cy) noexcept:
    cdef double hl = 0.5 * length
    cdef double hw = 0.5 * width
    cx[0] = x + c * hl - s * hw; cy[0] = y + s * hl + c * hw
    cx[1] = x + c * hl + s * hw; cy[1] = y + s * hl - c * hw
    cx[2] = x - c * hl + s * hw; cy[2] = y - s * hl - c * hw
    cx[3] = x - c * hl - s * hw; cy[3] = y - s * hl + c * hw


cdef void _project(double* cx, double* cy, double ax, double ay,
                   double* lo, double* hi) noexcept:
    cdef double d
    cdef int i
    lo[0] = INFINITY
    hi[0] = -INFINITY
    for i in range(4):
        d = cx[i] * ax + cy[i] * ay
        if d < lo[0]:
            lo[0] = d
        if d > hi[0]:
            hi[0] = d


def rect_overlap(double x1, double y1, double psi1, double len1, double wid1,
                 double x2, double y2, double psi2, double len2, double wid2):
    """See cavshield.kernels.pure.rect_overlap."""
    cdef double dx = x2 - x1
    cdef double dy = y2 - y1
    cdef double r1 = 0.5 * sqrt(len1 * len1 + wid1 * wid1)
    cdef double r2 = 0.5 * sqrt(len2 * len2 + wid2 * wid2)
    if sqrt(dx * dx + dy * dy) > r1 + r2:
        return False

    cdef double c1 = cos(psi1)
    cdef double s1 = sin(psi1)
    cdef double c2 = cos(psi2)
    cdef double s2 = sin(psi2)
    cdef double cx1[4]
    cdef double cy1[4]
    cdef double cx2[4]
    cdef double cy2[4]
    _corners(x1, y1, c1, s1, len1, wid1, cx1, cy1)
    _corners(x2, y2, c2, s2, len2, wid2, cx2, cy2)

    cdef double axes_x[4]
    cdef double axes_y[4]
    axes_x[0] = c1;  axes_y[0] = s1
    axes_x[1] = -s1; axes_y[1] = c1
    axes_x[2] = c2;  axes_y[2] = s2
    axes_x[3] = -s2; axes_y[3] = c2

    cdef double lo1p, hi1p, lo2p, hi2p
    cdef int k
    for k in range(4):
        _project(cx1, cy1, axes_x[k], axes_y[k], &lo1p, &hi1p)
        _project(cx2, cy2, axes_x[k], axes_y[k], &lo2p, &hi2p)
        if hi1p < lo2p or hi2p < lo1p:
            return False
    return True
