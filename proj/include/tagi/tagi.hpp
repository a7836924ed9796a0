#pragma once

#include "tagi/data.hpp"
#include "tagi/gaussian.hpp"
#include "tagi/heads.hpp"
#include "tagi/infer.hpp"
#include "tagi/moments.hpp"
#include "tagi/net.hpp"
#include "tagi/train.hpp"
