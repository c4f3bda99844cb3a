# 日志、配置与资源监控
