namespace vconv {}
