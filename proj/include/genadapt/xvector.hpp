#pragma once

#include <string>
#include <vector>

namespace genadapt {

// Fixed-dimensional speaker embedding, file-loaded or deterministically
// stubbed from the speaker id.
struct XVector {
  std::vector<double> values;
  std::string speaker;
  enum class Source { file, stub } source = Source::stub;
};

}  // namespace genadapt
