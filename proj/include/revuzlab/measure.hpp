/// @file measure.hpp
/// @brief Declarative catalog of smooth measures (densities, hyperplane
///        surface measure, point masses, scalings, sums, restrictions),
///        exhaustion nests, set descriptors with predicate combinators,
///        quadrature masses with divergence detection, and nest-quality /
///        attachment surrogates.
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "revuzlab/estimate.hpp"
#include "revuzlab/geometry.hpp"
#include "revuzlab/process.hpp"
#include "revuzlab/quadrature.hpp"

namespace revuzlab {

// ---------------------------------------------------------------------------
// Set descriptors
// ---------------------------------------------------------------------------

/// Bounded set given by a membership predicate plus a bounding box.  Closed
/// under intersection / union / difference; only the named constructors are
/// JSON-serializable (combinators drop the serialized form).
struct SetSpec {
  int dim = 1;
  Box box;
  SetMask member;
  std::string label;
  std::optional<nlohmann::json> jform;

  bool contains(const Pt& x) const { return box.contains(x) && member(x); }
};

SetSpec set_ball(int dim, const Pt& center, double r);
SetSpec set_box(const Box& b);
SetSpec set_annulus(int dim, const Pt& center, double r0, double r1);
SetSpec set_intersect(const SetSpec& a, const SetSpec& b);
SetSpec set_union(const SetSpec& a, const SetSpec& b);
SetSpec set_difference(const SetSpec& a, const SetSpec& b);
/// Always-false set (zero mass against everything).
SetSpec set_empty(int dim);

nlohmann::json set_to_json(const SetSpec& s);
SetSpec set_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Singular series system (shared by the series density and its nest)
// ---------------------------------------------------------------------------

/// A finite family of singular wells f(x) = sum_j c_j |x - x_j|^{-alpha_j}
/// with alpha_j > d, centers enumerating the dyadic-rational points of
/// [-1,1]^d, and coefficients calibrated so that outside the level-j well
/// of its own nest the j-th term never exceeds 2^{-j}.
struct SeriesSystem {
  int dim = 3;
  int count = 16;
  std::vector<Pt> centers;
  std::vector<double> exponents;  ///< alpha_j = dim + 1
  std::vector<double> coeffs;     ///< c_j = 2^{-j} * clearance_j^{alpha_j}

  /// Well radius of center j at level k.
  double radius(int /*j*/, int k) const { return std::ldexp(1.0, -(k + 3)); }
  double density(const Pt& x) const;

  static std::shared_ptr<const SeriesSystem> standard(int dim = 3,
                                                      int count = 16);
};

// ---------------------------------------------------------------------------
// Density families and measures
// ---------------------------------------------------------------------------

struct DensityFamily {
  enum class Kind {
    Constant,
    RadialPower,           ///< c |x-a|^{-beta}
    TruncatedRadialPower,  ///< c (|x-a|^{-beta} capped at cap)
    Series,
    GaussBump,             ///< c exp(-|x-a|^2 / (2 width^2))
    Custom
  };
  Kind kind = Kind::Constant;
  double c = 1.0;
  Pt center{};
  double beta = 0.0;
  double cap = 0.0;    ///< truncation level (TruncatedRadialPower)
  double width = 1.0;  ///< GaussBump
  std::shared_ptr<const SeriesSystem> series;
  Fn custom;
  std::string custom_tag;

  static DensityFamily constant(double c);
  static DensityFamily radial_power(double c, const Pt& center, double beta);
  static DensityFamily truncated_radial_power(double c, const Pt& center,
                                              double beta, double cap);
  static DensityFamily make_series(std::shared_ptr<const SeriesSystem> sys);
  /// amp * exp(-|x-center|^2 / (2 width^2)); serializable by its parameters.
  static DensityFamily gauss_bump(int dim, double amp, const Pt& center,
                                  double width);

  double eval(int dim, const Pt& x) const;  ///< may return +inf at centers
  nlohmann::json to_json() const;
  static DensityFamily from_json(const nlohmann::json& j);
};

struct SmoothMeasureSpec {
  enum class Kind { Density, Hyperplane, Dirac, Scaled, Sum, Restricted };
  Kind kind = Kind::Density;
  int dim = 1;
  DensityFamily family;                           // Density
  int hyper_coord = 0;                            // Hyperplane {x_k = 0}
  double dirac_point = 0.0;                       // Dirac (d = 1 only)
  double scale = 1.0;                             // Scaled
  std::vector<SmoothMeasureSpec> parts;           // Scaled/Restricted: 1, Sum: n
  std::shared_ptr<const SetSpec> set;             // Restricted

  std::string label() const;
  nlohmann::json to_json() const;
  static SmoothMeasureSpec from_json(const nlohmann::json& j);
};

SmoothMeasureSpec measure_density(int dim, DensityFamily f);
SmoothMeasureSpec measure_lebesgue(int dim);
/// Surface (d-1)-dimensional Lebesgue measure on {x_k = 0}; requires d >= 2.
SmoothMeasureSpec measure_hyperplane(int dim, int coord);
/// Unit point mass (d = 1 only; points are polar in d >= 2).
SmoothMeasureSpec measure_dirac(double point);
SmoothMeasureSpec measure_scaled(double c, SmoothMeasureSpec inner);
SmoothMeasureSpec measure_sum(std::vector<SmoothMeasureSpec> parts);
SmoothMeasureSpec measure_restricted(SmoothMeasureSpec inner, SetSpec set);

/// True when the measure (after unwrapping scalings/sums/restrictions) is
/// given by a pointwise-evaluable density against Lebesgue.
bool has_density(const SmoothMeasureSpec& mu);

/// Pointwise density against Lebesgue; +inf allowed at singular centers.
/// Throws std::invalid_argument for hyperplane / point-mass variants.
double density_eval(const SmoothMeasureSpec& mu, const Pt& x);

struct QuadConfig {
  double rel_tol = 1e-4;
  int start_grid = 16;
  int max_levels = 6;
  /// Radius around each singular center handled in polar coordinates,
  /// as a fraction of the bounding-box diameter.
  double polar_fraction = 0.08;
};

/// mu(B) by deterministic quadrature: polar coordinates inside a detection
/// radius of each singular center, masked midpoint refinement elsewhere.
/// A non-integrable singularity inside B reports value +inf in-band.
Estimate measure_of_set(const SmoothMeasureSpec& mu, const SetSpec& B,
                        const QuadConfig& cfg = {});

/// Singular centers of the density (points where it diverges), with their
/// local exponents; used for quadrature splitting and divergence detection.
struct SingularCenter {
  Pt where{};
  double exponent = 0.0;
};
std::vector<SingularCenter> singular_centers(const SmoothMeasureSpec& mu);

/// Centers where the density varies steeply enough to deserve substep
/// refinement: the singular ones plus truncated-power centers, so a capped
/// density refines exactly like its singular limit under common randomness.
std::vector<SingularCenter> refinement_centers(const SmoothMeasureSpec& mu);

// ---------------------------------------------------------------------------
// Nests
// ---------------------------------------------------------------------------

struct NestSpec {
  enum class Kind { Balls, Annuli, AnnuliMinusBalls, SeriesNest, Intersect };
  Kind kind = Kind::Balls;
  int dim = 1;
  double scale = 1.0;            ///< Balls: member l = {|x| <= scale*l}
  Pt center{};                   ///< Annuli / AnnuliMinusBalls
  std::vector<Pt> excluded;      ///< AnnuliMinusBalls: centers of removed balls
  std::shared_ptr<const SeriesSystem> series;  ///< SeriesNest
  std::shared_ptr<const NestSpec> left, right;  ///< Intersect

  std::string label() const;
  nlohmann::json to_json() const;
  static NestSpec from_json(const nlohmann::json& j);
};

NestSpec nest_balls(int dim, double scale = 1.0);
NestSpec nest_annuli(int dim, const Pt& center);
NestSpec nest_annuli_minus_balls(int dim, const Pt& center,
                                 std::vector<Pt> excluded);
NestSpec nest_series(std::shared_ptr<const SeriesSystem> sys);
NestSpec nest_intersect(const NestSpec& a, const NestSpec& b);

/// Member at level l >= 1 as a set descriptor (throws for l < 1).
SetSpec nest_member(const NestSpec& nest, int ell);

/// Monte-Carlo surrogate for the capacity decay of K minus the level-l
/// member: the largest, over a start grid covering K, of the probability
/// that a path started there visits K minus F_l before T or death.
Estimate nest_quality(const NestSpec& nest, const ProcessSpec& process,
                      const SetSpec& K, int ell, double T, double dt,
                      int grid_per_axis, std::int64_t paths_per_start,
                      std::uint64_t master_seed, int workers = 0);

/// Whether the restriction of mu to the level-l member carries finite mass
/// and finite, refinement-stable energy (the criterion for a measure to be
/// chargeable through the nest).
struct AttachmentReport {
  Estimate mass;
  Estimate potential_sup;
  bool attached = false;
  std::string note;
};
AttachmentReport attachment_check(const ProcessSpec& process,
                                  const SmoothMeasureSpec& mu,
                                  const NestSpec& nest, int ell,
                                  const QuadConfig& cfg = {});

}  // namespace revuzlab
