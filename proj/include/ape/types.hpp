#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ape {

using Index = Eigen::Index;

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matd = Mat<double>;
using Vecd = Vec<double>;

// Failure of a numeric procedure (singular system, diverging solve,
// non-finite intermediate).  Precondition violations on arguments use
// std::invalid_argument instead.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Observed sample.  Rows of X are observations; Y holds responses in [0, 1]
// (binary outcomes or probabilities for fractional responses).
struct Dataset {
  Matd X;
  Vecd Y;
  std::vector<std::string> feature_names;  // empty, or one name per column

  Index n() const { return X.rows(); }
  Index p() const { return X.cols(); }

  // Enforces shape agreement, finiteness, and the response range.
  void validate() const {
    if (X.rows() == 0 || X.cols() == 0)
      throw std::invalid_argument("dataset: X must be non-empty");
    if (Y.size() != X.rows())
      throw std::invalid_argument("dataset: Y length " + std::to_string(Y.size()) +
                                  " does not match row count " + std::to_string(X.rows()));
    if (!feature_names.empty() && static_cast<Index>(feature_names.size()) != X.cols())
      throw std::invalid_argument("dataset: feature_names size does not match column count");
    if (!X.allFinite())
      throw std::invalid_argument("dataset: X contains non-finite entries");
    for (Index i = 0; i < Y.size(); ++i) {
      if (!std::isfinite(Y[i]) || Y[i] < 0.0 || Y[i] > 1.0)
        throw std::invalid_argument("dataset: Y[" + std::to_string(i) +
                                    "] = " + std::to_string(Y[i]) + " outside [0, 1]");
    }
  }

  Dataset rows(const std::vector<Index>& idx) const {
    Dataset out;
    out.X.resize(static_cast<Index>(idx.size()), X.cols());
    out.Y.resize(static_cast<Index>(idx.size()));
    for (Index i = 0; i < out.X.rows(); ++i) {
      out.X.row(i) = X.row(idx[static_cast<size_t>(i)]);
      out.Y[i] = Y[idx[static_cast<size_t>(i)]];
    }
    out.feature_names = feature_names;
    return out;
  }
};

}  // namespace ape
