#pragma once

#include "texseg/config.hpp"
#include "texseg/evaluation.hpp"
#include "texseg/image.hpp"
#include "texseg/manifest.hpp"
#include "texseg/models.hpp"
#include "texseg/nn.hpp"
#include "texseg/rng.hpp"
#include "texseg/ssim.hpp"
#include "texseg/synthetic.hpp"
#include "texseg/tensor.hpp"
#include "texseg/training.hpp"
