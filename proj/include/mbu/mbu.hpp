#pragma once

#include "mbu/bitcore.hpp"
#include "mbu/config_io.hpp"
#include "mbu/error.hpp"
#include "mbu/image_io.hpp"
#include "mbu/layers.hpp"
#include "mbu/model_file.hpp"
#include "mbu/oracle.hpp"
#include "mbu/parallel.hpp"
#include "mbu/planner.hpp"
#include "mbu/quantizer.hpp"
#include "mbu/tensor.hpp"
#include "mbu/tensor_file.hpp"
#include "mbu/unet.hpp"
#include "mbu/unet_config.hpp"
#include "mbu/verify.hpp"
