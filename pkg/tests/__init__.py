"""
jetflow Test Suite
jet 格式、布朗路径、ODE 流与收敛框架的自动化测试
"""
