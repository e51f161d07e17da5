#ifndef MAT_MAT_HPP
#define MAT_MAT_HPP

#include "mat/attacks.hpp"
#include "mat/checkpoint.hpp"
#include "mat/config.hpp"
#include "mat/core/classifier.hpp"
#include "mat/core/error.hpp"
#include "mat/core/optim.hpp"
#include "mat/core/rng.hpp"
#include "mat/core/tensor.hpp"
#include "mat/data.hpp"
#include "mat/evaluation.hpp"
#include "mat/gradients.hpp"
#include "mat/io.hpp"
#include "mat/losses.hpp"
#include "mat/report.hpp"
#include "mat/sweep.hpp"
#include "mat/trainer.hpp"

#endif  // MAT_MAT_HPP
