#ifndef ELF_ELF_HPP
#define ELF_ELF_HPP

#include "blocks.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "conv.hpp"
#include "data.hpp"
#include "gradcheck.hpp"
#include "image.hpp"
#include "layers.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "optim.hpp"
#include "params.hpp"
#include "resize.hpp"
#include "run_config.hpp"
#include "tensor.hpp"
#include "train.hpp"

#endif  // ELF_ELF_HPP
