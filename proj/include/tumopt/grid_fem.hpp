#pragma once

// Structured-grid bilinear (Q1) finite elements on a rectangle.
//
// Node numbering is lexicographic, node(i, j) = i + j * (nx + 1). Local cell
// nodes run counter-clockwise from the lower-left corner. Vector fields store
// two interleaved components per node: dof = 2 * node + component.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tumopt {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

/// Nodal coefficients of a scalar field (phi, mu, sigma and their adjoints).
using ScalarField = Eigen::VectorXd;
/// Interleaved nodal coefficients of a 2D vector field (u and its adjoint).
using VectorField = Eigen::VectorXd;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Side { left = 0, right = 1, bottom = 2, top = 3 };

inline const char* side_name(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    case Side::bottom: return "bottom";
    case Side::top: return "top";
  }
  return "?";
}

inline Side parse_side(const std::string& name) {
  if (name == "left") return Side::left;
  if (name == "right") return Side::right;
  if (name == "bottom") return Side::bottom;
  if (name == "top") return Side::top;
  throw ConfigError("unknown boundary side '" + name + "'");
}

/// Whole-edge selection of the Dirichlet portion of the boundary.
struct DirichletSpec {
  std::array<bool, 4> sides{true, false, false, false};

  static DirichletSpec left_edge() { return {}; }
  static DirichletSpec from(std::initializer_list<Side> list) {
    DirichletSpec spec;
    spec.sides = {false, false, false, false};
    for (Side s : list) spec.sides[static_cast<int>(s)] = true;
    return spec;
  }
  bool contains(Side s) const { return sides[static_cast<int>(s)]; }
  bool empty() const { return !(sides[0] || sides[1] || sides[2] || sides[3]); }
};

enum class BoundaryTag { dirichlet, neumann };

struct BoundaryEdge {
  std::array<int, 2> nodes;
  Side side;
  BoundaryTag tag;
  double length;
};

/// 2x2 Gauss rule on a uniform cell; identical for every cell of the grid.
struct CellQuadrature {
  static constexpr int points = 4;
  std::array<double, points> weight{};
  // shape[q][a], dx[q][a], dy[q][a]
  std::array<std::array<double, 4>, points> shape{};
  std::array<std::array<double, 4>, points> dx{};
  std::array<std::array<double, 4>, points> dy{};
  // reference coordinates in [0, 1]^2 of each point
  std::array<std::array<double, 2>, points> ref{};
};

class Grid {
 public:
  int nx = 0;
  int ny = 0;
  double lx = 0.0;
  double ly = 0.0;
  double hx = 0.0;
  double hy = 0.0;
  DirichletSpec dirichlet;
  std::vector<BoundaryEdge> edges;
  /// Boundary nodes in increasing node order.
  std::vector<int> boundary_nodes;
  /// node -> position in boundary_nodes, or -1 for interior nodes.
  std::vector<int> boundary_index;
  /// 1 on nodes touching a Dirichlet edge.
  std::vector<char> dirichlet_node;
  CellQuadrature quad;

  int node_count() const { return (nx + 1) * (ny + 1); }
  int cell_count() const { return nx * ny; }
  int node(int i, int j) const { return i + j * (nx + 1); }
  double x(int n) const { return hx * (n % (nx + 1)); }
  double y(int n) const { return hy * (n / (nx + 1)); }
  double cell_area() const { return hx * hy; }

  std::array<int, 4> cell_nodes(int c) const {
    const int i = c % nx;
    const int j = c / nx;
    return {node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)};
  }
  /// Physical coordinates of quadrature point q of cell c.
  std::array<double, 2> quad_point(int c, int q) const {
    const int i = c % nx;
    const int j = c / nx;
    return {hx * (i + quad.ref[q][0]), hy * (j + quad.ref[q][1])};
  }
  bool is_boundary(int n) const { return boundary_index[n] >= 0; }
};

inline CellQuadrature make_cell_quadrature(double hx, double hy) {
  CellQuadrature qr;
  const double g = 0.5 / std::sqrt(3.0);
  const std::array<double, 2> pts{0.5 - g, 0.5 + g};
  const std::array<std::array<double, 2>, 4> corner{{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
  int q = 0;
  for (int b = 0; b < 2; ++b) {
    for (int a = 0; a < 2; ++a, ++q) {
      const double s = pts[a];
      const double t = pts[b];
      qr.ref[q] = {s, t};
      qr.weight[q] = 0.25 * hx * hy;
      for (int k = 0; k < 4; ++k) {
        const double sx = corner[k][0] > 0 ? s : 1.0 - s;
        const double ty = corner[k][1] > 0 ? t : 1.0 - t;
        const double dsx = corner[k][0] > 0 ? 1.0 : -1.0;
        const double dty = corner[k][1] > 0 ? 1.0 : -1.0;
        qr.shape[q][k] = sx * ty;
        qr.dx[q][k] = dsx * ty / hx;
        qr.dy[q][k] = sx * dty / hy;
      }
    }
  }
  return qr;
}

inline Grid build_grid(int nx, int ny, double lx, double ly,
                       DirichletSpec dirichlet = DirichletSpec::left_edge()) {
  if (nx < 1 || ny < 1) throw ConfigError("grid needs nx, ny >= 1");
  if (!(lx > 0.0) || !(ly > 0.0)) throw ConfigError("grid lengths must be positive");
  if (dirichlet.empty()) {
    throw ConfigError("Dirichlet boundary portion is empty; the elasticity problem needs a clamped edge");
  }
  Grid g;
  g.nx = nx;
  g.ny = ny;
  g.lx = lx;
  g.ly = ly;
  g.hx = lx / nx;
  g.hy = ly / ny;
  g.dirichlet = dirichlet;
  g.quad = make_cell_quadrature(g.hx, g.hy);

  auto add_edge = [&](int a, int b, Side s, double len) {
    const BoundaryTag tag = dirichlet.contains(s) ? BoundaryTag::dirichlet : BoundaryTag::neumann;
    g.edges.push_back({{a, b}, s, tag, len});
  };
  for (int i = 0; i < nx; ++i) add_edge(g.node(i, 0), g.node(i + 1, 0), Side::bottom, g.hx);
  for (int j = 0; j < ny; ++j) add_edge(g.node(nx, j), g.node(nx, j + 1), Side::right, g.hy);
  for (int i = 0; i < nx; ++i) add_edge(g.node(i, ny), g.node(i + 1, ny), Side::top, g.hx);
  for (int j = 0; j < ny; ++j) add_edge(g.node(0, j), g.node(0, j + 1), Side::left, g.hy);

  const int n = g.node_count();
  g.boundary_index.assign(n, -1);
  g.dirichlet_node.assign(n, 0);
  std::vector<char> on_boundary(n, 0);
  for (const auto& e : g.edges) {
    for (int v : e.nodes) {
      on_boundary[v] = 1;
      if (e.tag == BoundaryTag::dirichlet) g.dirichlet_node[v] = 1;
    }
  }
  for (int v = 0; v < n; ++v) {
    if (on_boundary[v]) {
      g.boundary_index[v] = static_cast<int>(g.boundary_nodes.size());
      g.boundary_nodes.push_back(v);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Interpolation at quadrature points

/// Value of a scalar field at quadrature point q of cell c.
inline double value_at(const Grid& g, const Vector& f, const std::array<int, 4>& nodes, int q) {
  double v = 0.0;
  for (int a = 0; a < 4; ++a) v += g.quad.shape[q][a] * f[nodes[a]];
  return v;
}

/// Engineering (Voigt) strain [e_xx, e_yy, 2 e_xy] of a vector field at a quadrature point.
inline Eigen::Vector3d strain_at(const Grid& g, const Vector& u, const std::array<int, 4>& nodes, int q) {
  Eigen::Vector3d e = Eigen::Vector3d::Zero();
  for (int a = 0; a < 4; ++a) {
    const double ux = u[2 * nodes[a]];
    const double uy = u[2 * nodes[a] + 1];
    e[0] += g.quad.dx[q][a] * ux;
    e[1] += g.quad.dy[q][a] * uy;
    e[2] += g.quad.dy[q][a] * ux + g.quad.dx[q][a] * uy;
  }
  return e;
}

/// Strain-displacement rows: column 2a+c is the engineering strain of the unit
/// displacement of local node a in direction c.
inline Eigen::Matrix<double, 3, 8> strain_matrix(const Grid& g, int q) {
  Eigen::Matrix<double, 3, 8> b = Eigen::Matrix<double, 3, 8>::Zero();
  for (int a = 0; a < 4; ++a) {
    b(0, 2 * a) = g.quad.dx[q][a];
    b(1, 2 * a + 1) = g.quad.dy[q][a];
    b(2, 2 * a) = g.quad.dy[q][a];
    b(2, 2 * a + 1) = g.quad.dx[q][a];
  }
  return b;
}

// ---------------------------------------------------------------------------
// Scalar operators

struct Operator {
  SparseMatrix matrix;
  bool symmetric = false;

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }
  Vector operator*(const Vector& x) const { return matrix * x; }
};

/// Weighted mass matrix (c zeta_j, zeta_i) with c given at every quadrature point,
/// coeff[c * 4 + q].
inline SparseMatrix assemble_weighted_mass(const Grid& g, const std::vector<double>& coeff) {
  Triplets t;
  t.reserve(16 * static_cast<std::size_t>(g.cell_count()));
  for (int c = 0; c < g.cell_count(); ++c) {
    const auto nodes = g.cell_nodes(c);
    double local[4][4] = {};
    for (int q = 0; q < 4; ++q) {
      const double w = g.quad.weight[q] * coeff[4 * c + q];
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) local[a][b] += w * g.quad.shape[q][a] * g.quad.shape[q][b];
    }
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) t.emplace_back(nodes[a], nodes[b], local[a][b]);
  }
  SparseMatrix m(g.node_count(), g.node_count());
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

inline Operator assemble_mass(const Grid& g) {
  return {assemble_weighted_mass(g, std::vector<double>(4 * g.cell_count(), 1.0)), true};
}

inline Operator assemble_stiffness(const Grid& g) {
  Triplets t;
  t.reserve(16 * static_cast<std::size_t>(g.cell_count()));
  double local[4][4] = {};
  for (int q = 0; q < 4; ++q)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        local[a][b] += g.quad.weight[q] *
                       (g.quad.dx[q][a] * g.quad.dx[q][b] + g.quad.dy[q][a] * g.quad.dy[q][b]);
  for (int c = 0; c < g.cell_count(); ++c) {
    const auto nodes = g.cell_nodes(c);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) t.emplace_back(nodes[a], nodes[b], local[a][b]);
  }
  SparseMatrix k(g.node_count(), g.node_count());
  k.setFromTriplets(t.begin(), t.end());
  return {k, true};
}

enum class BoundaryPortion { whole, neumann };

/// Consistent edge mass of the bilinear traces on the selected boundary portion.
inline Operator assemble_boundary_mass(const Grid& g, BoundaryPortion portion) {
  Triplets t;
  for (const auto& e : g.edges) {
    if (portion == BoundaryPortion::neumann && e.tag != BoundaryTag::neumann) continue;
    const double d = e.length / 3.0;
    const double o = e.length / 6.0;
    t.emplace_back(e.nodes[0], e.nodes[0], d);
    t.emplace_back(e.nodes[1], e.nodes[1], d);
    t.emplace_back(e.nodes[0], e.nodes[1], o);
    t.emplace_back(e.nodes[1], e.nodes[0], o);
  }
  SparseMatrix m(g.node_count(), g.node_count());
  m.setFromTriplets(t.begin(), t.end());
  return {m, true};
}

/// Row-sum lumping of a scalar operator.
inline Vector lumped(const Operator& op) {
  Vector d = Vector::Zero(op.rows());
  for (int k = 0; k < op.matrix.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(op.matrix, k); it; ++it) d[it.row()] += it.value();
  return d;
}

// ---------------------------------------------------------------------------
// Elasticity

/// Constant elasticity tensor in Voigt form acting on engineering strain
/// [e_xx, e_yy, 2 e_xy] and returning [s_xx, s_yy, s_xy].
struct ElasticityTensor {
  Eigen::Matrix3d voigt = Eigen::Matrix3d::Identity();

  static ElasticityTensor isotropic(double lame_lambda, double lame_mu) {
    ElasticityTensor c;
    c.voigt << lame_lambda + 2 * lame_mu, lame_lambda, 0.0,
               lame_lambda, lame_lambda + 2 * lame_mu, 0.0,
               0.0, 0.0, lame_mu;
    return c;
  }

  /// Smallest c0 with E:CE >= c0 |E|^2 over symmetric E.
  double coercivity() const {
    // |E|^2 = e^T diag(1, 1, 1/2) e in engineering notation.
    const Eigen::Matrix3d s = Eigen::Vector3d(1.0, 1.0, std::sqrt(2.0)).asDiagonal();
    const Eigen::Matrix3d scaled = s * (0.5 * (voigt + voigt.transpose())) * s;
    return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(scaled).eigenvalues().minCoeff();
  }

  void validate() const {
    if ((voigt - voigt.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + voigt.cwiseAbs().maxCoeff()))
      throw ConfigError("elasticity tensor is not symmetric");
    if (!(coercivity() > 0.0))
      throw ConfigError("elasticity tensor is not positive definite (assumption A1)");
  }
};

/// Full vector-valued elasticity operator (C E(u), E(eta)) without boundary conditions.
inline Operator assemble_elasticity_full(const Grid& g, const ElasticityTensor& c) {
  c.validate();
  Eigen::Matrix<double, 8, 8> local = Eigen::Matrix<double, 8, 8>::Zero();
  for (int q = 0; q < 4; ++q) {
    const auto b = strain_matrix(g, q);
    local += g.quad.weight[q] * b.transpose() * c.voigt * b;
  }
  local = 0.5 * (local + local.transpose()).eval();
  Triplets t;
  t.reserve(64 * static_cast<std::size_t>(g.cell_count()));
  for (int cell = 0; cell < g.cell_count(); ++cell) {
    const auto nodes = g.cell_nodes(cell);
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b)
        t.emplace_back(2 * nodes[a / 2] + a % 2, 2 * nodes[b / 2] + b % 2, local(a, b));
  }
  SparseMatrix k(2 * g.node_count(), 2 * g.node_count());
  k.setFromTriplets(t.begin(), t.end());
  return {k, true};
}

/// Elasticity operator restricted to the displacement dofs off the Dirichlet
/// portion, together with its Cholesky factorization.
class ElasticityOperator {
 public:
  ElasticityOperator() = default;
  ElasticityOperator(const Grid& g, const ElasticityTensor& c) {
    const Operator full = assemble_elasticity_full(g, c);
    const int ndof = 2 * g.node_count();
    full_to_free_.assign(ndof, -1);
    for (int n = 0; n < g.node_count(); ++n) {
      if (g.dirichlet_node[n]) continue;
      for (int comp = 0; comp < 2; ++comp) {
        full_to_free_[2 * n + comp] = static_cast<int>(free_dofs_.size());
        free_dofs_.push_back(2 * n + comp);
      }
    }
    Triplets t;
    for (int k = 0; k < full.matrix.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(full.matrix, k); it; ++it) {
        const int r = full_to_free_[it.row()];
        const int col = full_to_free_[it.col()];
        if (r >= 0 && col >= 0) t.emplace_back(r, col, it.value());
      }
    reduced_.matrix.resize(static_cast<Eigen::Index>(free_dofs_.size()),
                           static_cast<Eigen::Index>(free_dofs_.size()));
    reduced_.matrix.setFromTriplets(t.begin(), t.end());
    reduced_.symmetric = true;
    auto factor = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(reduced_.matrix);
    if (factor->info() != Eigen::Success) throw ConfigError("elasticity operator is singular");
    factor_ = factor;
    full_size_ = ndof;
  }

  const Operator& reduced() const { return reduced_; }
  const std::vector<int>& free_dofs() const { return free_dofs_; }
  int full_size() const { return full_size_; }

  Vector restrict(const Vector& full) const {
    Vector r(static_cast<Eigen::Index>(free_dofs_.size()));
    for (std::size_t i = 0; i < free_dofs_.size(); ++i) r[i] = full[free_dofs_[i]];
    return r;
  }
  Vector prolong(const Vector& reduced) const {
    Vector f = Vector::Zero(full_size_);
    for (std::size_t i = 0; i < free_dofs_.size(); ++i) f[free_dofs_[i]] = reduced[i];
    return f;
  }
  /// Solves the reduced system for a full-length load; Dirichlet rows of the load are ignored.
  /// The map is symmetric, so it is also its own transpose.
  Vector solve(const Vector& load_full) const { return prolong(factor_->solve(restrict(load_full))); }

  double relative_residual(const Vector& u_full, const Vector& load_full) const {
    const Vector b = restrict(load_full);
    const Vector r = reduced_.matrix * restrict(u_full) - b;
    return r.norm() / std::max(1e-300, b.norm());
  }

 private:
  Operator reduced_;
  std::shared_ptr<const Eigen::SimplicialLDLT<SparseMatrix>> factor_;
  std::vector<int> free_dofs_;
  std::vector<int> full_to_free_;
  int full_size_ = 0;
};

/// Rectangular map from scalar dofs to vector residuals, phi -> (C(phi E*), E(eta)).
/// e_star is the misfit strain in engineering form.
inline Operator assemble_coupling_phi_to_strain(const Grid& g, const ElasticityTensor& c,
                                                const Eigen::Vector3d& e_star) {
  const Eigen::Vector3d stress = c.voigt * e_star;
  Triplets t;
  t.reserve(32 * static_cast<std::size_t>(g.cell_count()));
  Eigen::Matrix<double, 8, 4> local = Eigen::Matrix<double, 8, 4>::Zero();
  for (int q = 0; q < 4; ++q) {
    const Eigen::Matrix<double, 8, 1> bs = strain_matrix(g, q).transpose() * stress;
    for (int b = 0; b < 4; ++b) local.col(b) += g.quad.weight[q] * g.quad.shape[q][b] * bs;
  }
  for (int cell = 0; cell < g.cell_count(); ++cell) {
    const auto nodes = g.cell_nodes(cell);
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 4; ++b)
        if (local(a, b) != 0.0) t.emplace_back(2 * nodes[a / 2] + a % 2, nodes[b], local(a, b));
  }
  SparseMatrix m(2 * g.node_count(), g.node_count());
  m.setFromTriplets(t.begin(), t.end());
  return {m, false};
}

/// Load (tensor field T, E(eta)) for a stress tensor constant over the domain.
inline Vector assemble_constant_stress_load(const Grid& g, const Eigen::Vector3d& stress) {
  Vector f = Vector::Zero(2 * g.node_count());
  Eigen::Matrix<double, 8, 1> local = Eigen::Matrix<double, 8, 1>::Zero();
  for (int q = 0; q < 4; ++q) local += g.quad.weight[q] * strain_matrix(g, q).transpose() * stress;
  for (int cell = 0; cell < g.cell_count(); ++cell) {
    const auto nodes = g.cell_nodes(cell);
    for (int a = 0; a < 8; ++a) f[2 * nodes[a / 2] + a % 2] += local[a];
  }
  return f;
}

/// Boundary load (g, eta) on the Neumann portion for a constant traction.
inline Vector assemble_traction_load(const Grid& g, const Eigen::Vector2d& traction) {
  Vector f = Vector::Zero(2 * g.node_count());
  for (const auto& e : g.edges) {
    if (e.tag != BoundaryTag::neumann) continue;
    for (int v : e.nodes) {
      f[2 * v] += 0.5 * e.length * traction[0];
      f[2 * v + 1] += 0.5 * e.length * traction[1];
    }
  }
  return f;
}

/// Norm helpers used for trajectory comparisons.
inline double h1_norm_sq(const Operator& mass, const Operator& stiffness, const Vector& x) {
  return x.dot(mass * x) + x.dot(stiffness * x);
}

}  // namespace tumopt
