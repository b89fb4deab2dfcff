#include "nestseg/tensor.hpp"

#include <cmath>

namespace nestseg {

template <typename T>
bool TensorBase<T>::all_finite() const {
  for (const T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
void check_finite(const TensorBase<T>& t, const char* where) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i]))
      fail(std::string(where) + ": non-finite value at flat index " + std::to_string(i) +
           " in tensor " + t.shape_str());
  }
}

template class TensorBase<float>;
template class TensorBase<double>;
template void check_finite<float>(const TensorBase<float>&, const char*);
template void check_finite<double>(const TensorBase<double>&, const char*);

}  // namespace nestseg
