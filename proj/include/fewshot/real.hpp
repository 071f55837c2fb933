#pragma once

namespace fewshot {

#ifdef FEWSHOT_FLOAT32
using Real = float;
#else
using Real = double;
#endif

}  // namespace fewshot
