#include "spacy/scm/acyclicity.hpp"

#include <cmath>
#include <stdexcept>

namespace spacy::scm {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
constexpr int kTaylorTerms = 18;

Eigen::MatrixXd hadamard_square(const ad::Tensor& t) {
  const auto d = static_cast<Eigen::Index>(t.dim(0));
  Eigen::MatrixXd m = Eigen::Map<const RowMat>(t.data().data(), d, d);
  return m.cwiseProduct(m);
}

}  // namespace

Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("expm needs a square matrix");
  if (!a.allFinite()) throw std::domain_error("expm of a non-finite matrix");
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Eigen::MatrixXd s = a / std::ldexp(1.0, squarings);
  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  Eigen::MatrixXd term = result;
  for (int k = 1; k <= kTaylorTerms; ++k) {
    term = term * s / static_cast<double>(k);
    result += term;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

double acyclicity(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("acyclicity needs a square matrix");
  return expm(m.cwiseProduct(m)).trace() - static_cast<double>(m.rows());
}

ad::Var acyclicity(ad::Var m) {
  const ad::Tensor& mv = m.value();
  if (mv.rank() != 2 || mv.dim(0) != mv.dim(1)) throw std::invalid_argument("acyclicity needs a (D,D) matrix");
  const Eigen::MatrixXd e = expm(hadamard_square(mv));
  const double h = e.trace() - static_cast<double>(mv.dim(0));
  RowMat et = e.transpose();
  return m.tape()->record(ad::Tensor::scalar(h), {m}, [et = std::move(et)](const ad::BackwardArgs& args) {
    ad::Tensor* g = args.in_grads[0];
    if (g == nullptr) return;
    const double go = args.out_grad[0];
    const ad::Tensor& x = *args.in_values[0];
    for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += go * 2.0 * x[i] * et.data()[i];
  });
}

}  // namespace spacy::scm
