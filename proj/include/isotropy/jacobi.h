#pragma once

#include <cstddef>
#include <vector>

#include "isotropy/matrix.h"

namespace isotropy {

struct JacobiOptions {
    // Stop once the off-diagonal Frobenius mass drops below
    // tolerance * max(1, ||A||_F).
    double tolerance = 1e-12;
    int max_sweeps = 100;
};

// Eigenpairs of a real symmetric matrix. values are sorted descending and
// column k of vectors is the unit eigenvector for values[k].
struct EigenDecomposition {
    std::vector<double> values;
    Matrix vectors;
    int sweeps = 0;

    // V diag(values) V^T
    Matrix reconstruct() const;
};

// Cyclic Jacobi rotations. Intended for the small (N <= ~64) kernels this
// library produces; cost is O(N^3) per sweep. The caller is responsible for
// symmetry; only the upper triangle is read.
EigenDecomposition jacobi_eigen(const Matrix& symmetric, const JacobiOptions& options = {});

}  // namespace isotropy
