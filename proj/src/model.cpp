#include "corl/model.hpp"

namespace corl {

void ModelConfig::validate() const {
  backbone.validate();
  if (dict_size <= 0) throw InputError("dict_size must be positive");
  if (map_size <= 0) throw InputError("map_size must be positive");
  if (reduction <= 0 || dict_size % reduction != 0) {
    throw InputError("reduction " + std::to_string(reduction) + " must divide dict_size " + std::to_string(dict_size));
  }
  if (hidden <= 0) throw InputError("hidden must be positive");
  if (num_classes <= 0) throw InputError("num_classes must be positive");
}

}  // namespace corl
