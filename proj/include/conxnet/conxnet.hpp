#pragma once

#include "conxnet/data.hpp"
#include "conxnet/heatmap.hpp"
#include "conxnet/image_io.hpp"
#include "conxnet/layers.hpp"
#include "conxnet/metrics.hpp"
#include "conxnet/model.hpp"
#include "conxnet/optim.hpp"
#include "conxnet/perceptron.hpp"
#include "conxnet/tensor.hpp"
